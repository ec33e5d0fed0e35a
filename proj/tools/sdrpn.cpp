// sdrpn command-line tool.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
// Every subcommand accepts --config FILE: a JSON object whose keys are long option names
// (without dashes). Keys at the top level apply to whichever subcommand runs; an object
// under the subcommand's name overrides them. Options given on the command line win.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sdrpn/manifest.hpp"
#include "sdrpn/noise.hpp"
#include "sdrpn/pipeline.hpp"
#include "sdrpn/teacher.hpp"
#include "sdrpn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sdrpn;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---- config merging ----------------------------------------------------------------

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  if (v.is_number_float()) {
    std::ostringstream s;
    s << std::setprecision(17) << v.get<double>();
    return s.str();
  }
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  throw UsageError("config values must be scalars or arrays of scalars, got " + v.dump());
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& name) {
  const std::string flag = "--" + name;
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

// Config entries become command-line tokens placed before the user's own arguments.
// Top-level keys that only another subcommand knows are skipped, so one file can serve a whole run;
// keys no subcommand knows, and any unknown key inside a section, are errors.
std::vector<std::string> config_tokens(const CLI::App& app, const CLI::App& sub, const fs::path& file,
                                       const std::vector<std::string>& user_args,
                                       const std::set<std::string>& subcommand_names) {
  std::ifstream f(file);
  if (!f) throw UsageError("config file not found: " + file.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw UsageError("malformed config " + file.string() + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config " + file.string() + " must hold a JSON object");

  auto known_anywhere = [&](const std::string& key) {
    for (const auto& name : subcommand_names)
      if (app.get_subcommand(name)->get_option_no_throw("--" + key)) return true;
    return false;
  };

  json merged = json::object();
  std::set<std::string> from_section;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (subcommand_names.count(it.key())) {
      if (!it.value().is_object()) throw UsageError("config section '" + it.key() + "' must be an object");
      continue;
    }
    if (!known_anywhere(it.key()) && it.key() != "config")
      throw UsageError("config key '" + it.key() + "' is not an option of any subcommand");
    merged[it.key()] = it.value();
  }
  if (j.contains(sub.get_name())) {
    const json& section = j.at(sub.get_name());
    for (auto it = section.begin(); it != section.end(); ++it) {
      merged[it.key()] = it.value();
      from_section.insert(it.key());
    }
  }

  std::vector<std::string> out;
  for (auto it = merged.begin(); it != merged.end(); ++it) {
    const std::string& key = it.key();
    if (key == "config") continue;
    const CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (!opt && !from_section.count(key)) continue;
    if (!opt) throw UsageError("config key '" + key + "' is not an option of '" + sub.get_name() + "'");
    if (given_on_command_line(user_args, key)) continue;
    const json& v = it.value();
    if (opt->get_expected_min() == 0) {
      if (!v.is_boolean()) throw UsageError("config key '" + key + "' is a flag and needs true or false");
      if (v.get<bool>()) out.push_back("--" + key);
      continue;
    }
    if (v.is_array()) {
      if (v.empty()) continue;
      out.push_back("--" + key);
      for (const auto& e : v) out.push_back(scalar_text(e));
    } else {
      out.push_back("--" + key);
      out.push_back(scalar_text(v));
    }
  }
  return out;
}

// ---- option groups -------------------------------------------------------------------

struct TeacherOptions {
  TeacherConfig cfg;
  std::uint32_t grid = 0;

  void add(CLI::App* s) {
    s->add_option("--grid", grid, "Grid side length (sets --height and --width)");
    s->add_option("--height", cfg.height, "Token rows")->capture_default_str();
    s->add_option("--width", cfg.width, "Token columns")->capture_default_str();
    s->add_option("--feature-dim", cfg.feature_dim, "Visual feature dimension")->capture_default_str();
    s->add_option("--teacher-heads", cfg.heads, "Teacher attention heads")->capture_default_str();
    s->add_option("--responses", cfg.responses, "Response tokens per turn")->capture_default_str();
    s->add_option("--turns", cfg.turns, "Conversation turns per sample")->capture_default_str();
    s->add_option("--sinks", cfg.sink_count, "Sink tokens per sample")->capture_default_str();
    s->add_option("--sink-multiplier", cfg.sink_multiplier, "Sink norm as a multiple of sqrt(d)")->capture_default_str();
    s->add_option("--sink-boost", cfg.sink_boost, "Attention logit bonus on sinks")->capture_default_str();
    s->add_option("--signal", cfg.signal, "Attention logit bonus on target tokens")->capture_default_str();
    s->add_option("--drop-fraction", cfg.drop_fraction, "Share of target tokens without signal")->capture_default_str();
    s->add_option("--noise-scale", cfg.noise_scale, "Background attention noise")->capture_default_str();
    s->add_option("--noise-blur", cfg.noise_blur, "Spatial correlation of the noise field")->capture_default_str();
    s->add_option_function<std::string>(
         "--noise", [this](const std::string& v) { cfg.noise = parse_noise_model(v); }, "gaussian or gumbel")
        ->default_str("gaussian");
    s->add_option("--feature-signal", cfg.feature_signal, "Prototype strength in region features")->capture_default_str();
    s->add_option("--concepts", cfg.concepts, "Prototype vocabulary size")->capture_default_str();
    s->add_option("--distractors", cfg.distractors, "Non-queried regions per sample")->capture_default_str();
  }

  TeacherConfig resolve() const {
    TeacherConfig c = cfg;
    if (grid) c.height = c.width = grid;
    return c;
  }
};

void add_threshold_options(CLI::App* s, LabelThresholds& t, std::optional<double>& tau_norm) {
  s->add_option("--tau-fg", t.tau_fg, "Foreground threshold on a / a_max")->capture_default_str();
  s->add_option("--tau-bg", t.tau_bg, "Background threshold on a / a_max")->capture_default_str();
  s->add_option_function<double>(
      "--tau-norm", [&tau_norm](const double& v) { tau_norm = v; }, "Absolute sink norm threshold (default: automatic)");
  s->add_option("--norm-k", t.norm.k, "Automatic sink threshold: mean + k * std of token norms")->capture_default_str();
}

void resolve_thresholds(LabelThresholds& t, const std::optional<double>& tau_norm) {
  if (tau_norm) t.norm = NormThreshold::absolute(*tau_norm);
  t.validate();
}

// Student options are staged and applied on top of the chosen preset after parsing.
struct StudentOptions {
  StudentConfig staged;
  std::string preset = "default";
  std::string loss;
  std::vector<std::pair<CLI::Option*, std::function<void(StudentConfig&)>>> set;

  template <class T>
  void opt(CLI::App* s, const std::string& name, T StudentConfig::*field, const std::string& desc) {
    CLI::Option* o = s->add_option(name, staged.*field, desc);
    set.emplace_back(o, [this, field](StudentConfig& c) { c.*field = staged.*field; });
  }

  void add(CLI::App* s) {
    s->add_option("--preset", preset, "Base settings: default or bench")
        ->check(CLI::IsMember({"default", "bench"}))
        ->capture_default_str();
    opt(s, "--d-model", &StudentConfig::d_model, "Hidden width");
    opt(s, "--heads", &StudentConfig::heads, "Attention heads");
    opt(s, "--mlp-ratio", &StudentConfig::mlp_ratio, "MLP expansion ratio");
    opt(s, "--frozen", &StudentConfig::frozen, "Frozen backbone blocks (B)");
    opt(s, "--trainable", &StudentConfig::trainable, "Trainable student blocks (R)");
    opt(s, "--depth", &StudentConfig::depth, "Teacher depth");
    opt(s, "--lr", &StudentConfig::peak_lr, "Peak learning rate");
    opt(s, "--beta1", &StudentConfig::beta1, "AdamW beta1");
    opt(s, "--beta2", &StudentConfig::beta2, "AdamW beta2");
    opt(s, "--adam-eps", &StudentConfig::eps, "AdamW epsilon");
    opt(s, "--weight-decay", &StudentConfig::weight_decay, "Decoupled weight decay");
    opt(s, "--warmup-ratio", &StudentConfig::warmup_ratio, "Warm-up share of the total steps");
    opt(s, "--epochs", &StudentConfig::epochs, "Training epochs");
    opt(s, "--batch-size", &StudentConfig::batch_size, "Samples per step");
    opt(s, "--total-steps", &StudentConfig::total_steps, "Override the step count (0: epochs * batches)");
    opt(s, "--seed", &StudentConfig::seed, "Initialization and shuffle seed");
    s->add_option("--loss", loss, "bce or mse (default bce)");
  }

  StudentConfig resolve() const {
    StudentConfig c = preset == "bench" ? benchmark_student_config() : StudentConfig{};
    for (const auto& [o, apply] : set)
      if (o->count()) apply(c);
    if (!loss.empty()) c.loss = parse_loss_kind(loss);
    return c;
  }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

DatasetManifest load_manifest(const fs::path& p) {
  if (!fs::exists(p)) throw std::runtime_error("missing artifact: manifest " + p.string());
  return read_manifest(p);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-distilled region proposals on synthetic attention data", "sdrpn"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path;
  auto with_config = [&](CLI::App* s) {
    s->add_option("--config", config_path, "JSON config file; command-line options win");
    return s;
  };

  // gen
  auto* gen = with_config(app.add_subcommand("gen", "Generate a synthetic dataset"));
  TeacherOptions gen_teacher;
  gen_teacher.add(gen);
  std::size_t gen_num = 256;
  std::uint64_t gen_first = 0;
  std::string gen_out;
  gen->add_option("--num", gen_num, "Number of samples")->capture_default_str();
  gen->add_option("--seed", gen_teacher.cfg.seed, "Dataset seed")->capture_default_str();
  gen->add_option("--first-id", gen_first, "Id of the first sample")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();

  // pseudo-label
  auto* pl = with_config(app.add_subcommand("pseudo-label", "Turn teacher attention into training targets"));
  std::string pl_manifest, pl_out, pl_target = "labels";
  LabelThresholds pl_thr;
  std::optional<double> pl_tau_norm;
  bool pl_no_sink = false, pl_mse = false;
  double pl_smooth = 1.0;
  pl->add_option("--manifest", pl_manifest, "Dataset manifest")->required();
  pl->add_option("--out", pl_out, "Output directory")->required();
  add_threshold_options(pl, pl_thr, pl_tau_norm);
  pl->add_flag("--no-sink-removal", pl_no_sink, "Keep high-norm tokens in the attention map");
  pl->add_flag("--mse-regression-target", pl_mse, "Emit a / a_max regression targets instead of labels");
  pl->add_option("--target", pl_target, "labels, regression or pre-smoothed")->capture_default_str();
  pl->add_option("--smooth-sigma", pl_smooth, "Gaussian sigma for pre-smoothed targets")->capture_default_str();

  // train
  auto* tr = with_config(app.add_subcommand("train", "Train the student on pseudo-labelled data"));
  std::string tr_manifest, tr_out;
  StudentOptions tr_student;
  tr->add_option("--manifest", tr_manifest, "Pseudo-labelled manifest")->required();
  tr->add_option("--out", tr_out, "Checkpoint directory")->required();
  tr_student.add(tr);

  // predict
  auto* pr = with_config(app.add_subcommand("predict", "Write RoI logits (or raw teacher attention) per sample"));
  std::string pr_manifest, pr_checkpoint, pr_out;
  bool pr_attention = false;
  pr->add_option("--manifest", pr_manifest, "Dataset manifest")->required();
  pr->add_option("--checkpoint", pr_checkpoint, "Checkpoint directory");
  pr->add_flag("--teacher-attention", pr_attention, "Export the teacher's aggregated attention instead");
  pr->add_option("--out", pr_out, "Output directory")->required();

  // postprocess
  auto* pp = with_config(app.add_subcommand("postprocess", "Smooth, binarize and box the predictions"));
  std::string pp_pred, pp_out, pp_mode = "mask", pp_space;
  double pp_sigma = 1.0, pp_tau = 0.0;
  std::size_t pp_radius = 0;
  pp->add_option("--predictions", pp_pred, "Prediction directory")->required();
  pp->add_option("--out", pp_out, "Output directory")->required();
  pp->add_option("--mode", pp_mode, "box or mask")->capture_default_str();
  pp->add_option("--space", pp_space, "sigmoid, relative or sigmoid-relative (default: by source)");
  auto* pp_tau_opt = pp->add_option("--tau", pp_tau, "Binarization threshold (default 0.5 sigmoid, 0.2 relative)");
  pp->add_option("--sigma", pp_sigma, "Gaussian smoothing sigma; 0 disables")->capture_default_str();
  auto* pp_radius_opt = pp->add_option("--radius", pp_radius, "Kernel radius (default ceil(3 sigma))");

  // eval
  auto* ev = with_config(app.add_subcommand("eval", "Score RoIs against the planted regions"));
  std::string ev_manifest, ev_rois, ev_out;
  ev->add_option("--manifest", ev_manifest, "Ground-truth manifest")->required();
  ev->add_option("--rois", ev_rois, "Post-processing output directory")->required();
  ev->add_option("--out", ev_out, "Eval CSV (default <rois>/eval.csv)");

  // verify-theory
  auto* vt = with_config(app.add_subcommand("verify-theory", "Monte Carlo checks of the label-noise model"));
  NoiseSpec vt_spec;
  std::string vt_model = "ccn", vt_posterior = "logistic", vt_feature = "normal", vt_out;
  std::size_t vt_n = 1000000, vt_bins = 20, vt_fit_bins = 50;
  std::uint64_t vt_seed = 1;
  vt->add_option("--model", vt_model, "ccn, symccn or additive")->capture_default_str();
  vt->add_option("--rho0", vt_spec.rho0, "CCN: P(A=1 | Y=0)")->capture_default_str();
  vt->add_option("--rho1", vt_spec.rho1, "CCN: P(A=0 | Y=1)")->capture_default_str();
  vt->add_option("--rho", vt_spec.rho, "Symmetric flip rate")->capture_default_str();
  vt->add_option("--mu0", vt_spec.mu0, "Additive: background mean")->capture_default_str();
  vt->add_option("--mu1", vt_spec.mu1, "Additive: foreground mean")->capture_default_str();
  vt->add_option("--noise-scale", vt_spec.noise_scale, "Additive: noise sd")->capture_default_str();
  vt->add_option("--posterior", vt_posterior, "logistic, constant or step")->capture_default_str();
  vt->add_option("--slope", vt_spec.slope, "Logistic slope")->capture_default_str();
  vt->add_option("--constant", vt_spec.constant, "Constant posterior value")->capture_default_str();
  vt->add_option("--feature", vt_feature, "normal or uniform")->capture_default_str();
  vt->add_option("--n", vt_n, "Samples")->capture_default_str();
  vt->add_option("--seed", vt_seed, "Seed")->capture_default_str();
  vt->add_option("--bins", vt_bins, "Bins for the affinity check")->capture_default_str();
  vt->add_option("--fit-bins", vt_fit_bins, "Regressogram bins")->capture_default_str();
  vt->add_option("--out", vt_out, "Report directory (theory_bins.csv, theory.json)");

  // report
  auto* rp = with_config(app.add_subcommand("report", "Collect run summaries into one CSV"));
  std::vector<std::string> rp_dirs;
  std::string rp_out;
  rp->add_option("runs", rp_dirs, "Run directories (searched recursively for run.json)");
  rp->add_option("--out", rp_out, "Report CSV")->required();

  // bench
  auto* bn = with_config(app.add_subcommand("bench", "Run every ablation arm over several seeds"));
  TeacherOptions bn_teacher;
  bn_teacher.add(bn);
  StudentOptions bn_student;
  bn_student.preset = "bench";
  bn_student.add(bn);
  BenchConfig bn_cfg;
  std::vector<std::string> bn_arms;
  std::string bn_work;
  std::optional<double> bn_tau_norm;
  bn->add_option("--work", bn_work, "Work directory")->required();
  bn->add_option("--seeds", bn_cfg.seeds, "Seeds")->capture_default_str();
  bn->add_option("--arms", bn_arms, "Arms (default: all)");
  bn->add_option("--train-samples", bn_cfg.train_samples, "Training samples per seed")->capture_default_str();
  bn->add_option("--eval-samples", bn_cfg.eval_samples, "Held-out samples per seed")->capture_default_str();
  bn->add_option("--post-sigma", bn_cfg.post_sigma, "Post-smoothing sigma")->capture_default_str();
  bn->add_option("--pre-sigma", bn_cfg.pre_sigma, "Pre-smoothing sigma")->capture_default_str();
  add_threshold_options(bn, bn_cfg.thresholds, bn_tau_norm);

  // ambiguity
  auto* am = with_config(app.add_subcommand("ambiguity", "Histogram of relative attention against region membership"));
  TeacherOptions am_teacher;
  am_teacher.add(am);
  std::size_t am_samples = 1000, am_bins = 10;
  std::string am_out;
  am->add_option("--samples", am_samples, "Samples")->capture_default_str();
  am->add_option("--bins", am_bins, "Histogram bins")->capture_default_str();
  am->add_option("--seed", am_teacher.cfg.seed, "Dataset seed")->capture_default_str();
  am->add_option("--out", am_out, "CSV path (default: stdout)");

  // Pre-pass: splice config-file options in front of the user's arguments.
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    std::set<std::string> names;
    for (const auto* s : app.get_subcommands([](CLI::App*) { return true; })) names.insert(s->get_name());
    const auto sub_it = std::find_if(args.begin(), args.end(), [&](const std::string& a) { return names.count(a); });
    std::string cfg_file;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) cfg_file = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) cfg_file = args[i].substr(9);
    }
    if (!cfg_file.empty() && sub_it != args.end()) {
      const auto* sub = app.get_subcommand(*sub_it);
      const std::vector<std::string> user(sub_it + 1, args.end());
      auto extra = config_tokens(app, *sub, cfg_file, user, names);
      args.insert(sub_it + 1, extra.begin(), extra.end());
    }
  } catch (const std::exception& e) {
    std::cerr << "sdrpn: error: " << e.what() << "\n";
    return 2;
  }

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      const TeacherConfig tc = gen_teacher.resolve();
      tc.validate();
      if (gen_num == 0) throw UsageError("--num must be positive");
      generate_dataset(tc, gen_num, gen_out, gen_first);
      std::cout << (fs::path(gen_out) / "manifest.json").string() << "\n";
    } else if (*pl) {
      resolve_thresholds(pl_thr, pl_tau_norm);
      TargetOptions opt;
      opt.thresholds = pl_thr;
      opt.kind = pl_mse ? TargetKind::regression : parse_target_kind(pl_target);
      opt.sink_removal = !pl_no_sink;
      opt.smooth_sigma = pl_smooth;
      const auto st = run_pseudo_label(load_manifest(pl_manifest), opt, pl_out);
      std::cout << "samples " << st.samples << "  degenerate " << st.degenerate_samples << "  degenerate_turns "
                << st.degenerate_turns << "  sinks_removed " << st.sink_tokens_removed << "  fg_precision "
                << fmt(st.fg_precision()) << "\n"
                << (fs::path(pl_out) / "manifest.json").string() << "\n";
    } else if (*tr) {
      StudentConfig sc = tr_student.resolve();
      const auto m = load_manifest(tr_manifest);
      if (m.samples.empty()) throw UsageError("manifest " + tr_manifest + " has no samples");
      for (const auto& s : m.samples)
        if (!s.pseudo_label)
          throw std::runtime_error("missing artifact: sample " + std::to_string(s.id) + " in " + tr_manifest +
                                   " has no pseudo-label; run `sdrpn pseudo-label` first");
      sc.turns = m.samples.front().turns;
      sc.validate();
      LabelThresholds thr;
      const auto rep = distill_train(m, sc, thr, tr_out);
      std::cout << "examples " << rep.examples << "  skipped " << rep.skipped << "  steps " << rep.steps
                << "  initial_loss " << fmt(rep.initial_loss) << "  final_loss " << fmt(rep.running_loss)
                << "  converged_loss " << fmt(rep.converged_loss) << "\n"
                << tr_out << "\n";
    } else if (*pr) {
      const auto m = load_manifest(pr_manifest);
      if (pr_attention == !pr_checkpoint.empty())
        throw UsageError("predict needs exactly one of --checkpoint and --teacher-attention");
      const auto idx = pr_attention ? export_attention(m, pr_out) : run_predict(load_checkpoint(pr_checkpoint), m, pr_out);
      std::cout << "samples " << idx.samples.size() << "  source " << idx.source << "\n" << pr_out << "\n";
    } else if (*pp) {
      const auto idx = read_prediction_index(pp_pred);
      PostprocessOptions opt;
      opt.mode = parse_upscale_mode(pp_mode);
      opt.space = !pp_space.empty()           ? parse_score_space(pp_space)
                  : idx.source == "attention" ? ScoreSpace::relative
                                              : ScoreSpace::sigmoid;
      opt.tau = pp_tau_opt->count() ? pp_tau : (opt.space == ScoreSpace::sigmoid ? 0.5 : 0.2);
      opt.sigma = pp_sigma;
      if (pp_radius_opt->count()) opt.radius = pp_radius;
      if (!(opt.sigma >= 0.0)) throw UsageError("--sigma must be non-negative");
      const auto rois = run_postprocess(idx, opt, pp_out);
      std::size_t empty = 0;
      for (const auto& r : rois) empty += r.result.empty;
      std::cout << "rois " << rois.size() << "  empty " << empty << "  mode " << upscale_mode_name(opt.mode)
                << "  space " << score_space_name(opt.space) << "  tau " << opt.tau << "\n"
                << pp_out << "\n";
    } else if (*ev) {
      const auto gt = load_manifest(ev_manifest);
      const auto rep = run_eval(gt, read_rois(ev_rois));
      const fs::path out = ev_out.empty() ? fs::path(ev_rois) / "eval.csv" : fs::path(ev_out);
      write_eval_csv(rep, out);
      std::cout << "rows " << rep.rows.size() << "  degenerate " << rep.degenerate << "  mean_iou "
                << fmt(rep.mean_selection) << "  median_iou " << fmt(rep.median_selection) << "  mean_box_iou "
                << fmt(rep.mean_box) << "\n"
                << out.string() << "\n";
    } else if (*vt) {
      vt_spec.model = parse_label_noise(vt_model);
      vt_spec.posterior = parse_posterior(vt_posterior);
      vt_spec.feature = parse_feature_dist(vt_feature);
      vt_spec.validate();
      if (vt_n == 0) throw UsageError("--n must be positive");
      const auto r = verify_theory(vt_spec, vt_n, vt_seed, vt_bins, vt_fit_bins);
      if (!vt_out.empty()) write_theory_report(r, vt_out);
      const auto& a = r.affinity;
      const auto& v = r.variance;
      std::cout << "affinity " << (a.pass ? "pass" : "FAIL") << "  bins " << a.rows.size() << "  dropped "
                << a.dropped_bins << "  within_3se " << fmt(a.within_fraction, 3) << "  max_gap "
                << fmt(a.max_abs_gap, 5) << "\n";
      std::cout << "variance " << (v.ordering ? "pass" : "FAIL") << "  mse_raw " << fmt(v.mse_raw, 6) << "  mse_fit "
                << fmt(v.mse_fit, 6) << "  cond_var " << fmt(v.expected_cond_var, 6)
                << (v.equality_case ? "  [equality case]" : "") << (v.noise_free ? "  [noise free]" : "") << "\n";
      std::cout << "monotone " << (v.monotone ? "pass" : "FAIL") << "\n";
      if (r.classified) {
        const auto& c = r.classification;
        std::cout << "classification  error_raw " << fmt(c.error_raw) << "  error_fit " << fmt(c.error_fit)
                  << "  bayes " << fmt(c.bayes_error) << (c.fit_better ? "  [fit better]" : "  [raw not beaten]")
                  << "\n";
      }
      std::cout << (r.pass() ? "PASS" : "FAIL") << "\n";
      return r.pass() ? 0 : 1;
    } else if (*rp) {
      std::vector<fs::path> dirs(rp_dirs.begin(), rp_dirs.end());
      std::vector<std::string> warnings;
      const auto runs = collect_runs(dirs, &warnings);
      for (const auto& w : warnings) std::cerr << "sdrpn: warning: " << w << "\n";
      write_report_csv(runs, rp_out);
      std::cout << "rows " << runs.size() << "\n" << rp_out << "\n";
    } else if (*bn) {
      bn_cfg.teacher = bn_teacher.resolve();
      bn_cfg.student = bn_student.resolve();
      resolve_thresholds(bn_cfg.thresholds, bn_tau_norm);
      if (!bn_arms.empty()) {
        bn_cfg.arms.clear();
        for (const auto& a : bn_arms) bn_cfg.arms.push_back(parse_arm(a));
      }
      run_bench(bn_cfg, bn_work, [](const RunSummary& s) {
        std::cout << std::left << std::setw(16) << s.arm << " seed " << s.seed << "  mean_iou " << fmt(s.mean_iou)
                  << "  median_iou " << fmt(s.median_iou) << "  box_iou " << fmt(s.mean_box_iou) << "  final_loss "
                  << fmt(s.final_loss) << "  converged_loss " << fmt(s.converged_loss) << std::endl;
      });
      std::cout << (fs::path(bn_work) / "report.csv").string() << "\n";
    } else if (*am) {
      const TeacherConfig tc = am_teacher.resolve();
      tc.validate();
      const auto hist = ambiguity_histogram(tc, am_samples, am_bins);
      std::ofstream file;
      if (!am_out.empty()) {
        file.open(am_out, std::ios::binary);
        if (!file) throw std::runtime_error("cannot write " + am_out);
      }
      std::ostream& os = am_out.empty() ? std::cout : file;
      os << "lo,hi,tokens,inside,proportion\n";
      for (const auto& b : hist)
        os << b.lo << ',' << b.hi << ',' << b.tokens << ',' << b.inside << ',' << fmt(b.proportion(), 6) << '\n';
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "sdrpn: error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "sdrpn: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
