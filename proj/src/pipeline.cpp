#include "sdrpn/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace sdrpn {

using nlohmann::json;

namespace {

std::string sample_file(std::uint64_t id, const std::string& suffix) {
  return "sample_" + std::to_string(id) + "_" + suffix;
}

std::string rebase(const DatasetManifest& m, const std::string& rel, const fs::path& new_root) {
  return fs::relative(fs::absolute(m.resolve(rel)), fs::absolute(new_root)).generic_string();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

json read_json(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("missing artifact: " + p.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed JSON in " + p.string() + ": " + e.what());
  }
}

json box_json(const TokenBox& b) { return json::array({b.r0, b.c0, b.r1, b.c1}); }

TokenBox box_from_json(const json& j) {
  return TokenBox{j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>(), j.at(2).get<std::size_t>(),
                  j.at(3).get<std::size_t>()};
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

// ---- pseudo-label ----------------------------------------------------------

PseudoLabelStats run_pseudo_label(const DatasetManifest& in, const TargetOptions& opt, const fs::path& out_dir) {
  opt.thresholds.validate();
  fs::create_directories(out_dir / "targets");
  DatasetManifest out = in;
  out.root = out_dir;
  PseudoLabelStats st;
  for (auto& s : out.samples) {
    const auto t = make_targets(in, s, opt);
    const BinaryMask gt = binary_mask_from_grid(read_grid(in.resolve(s.gt_mask)));
    ++st.samples;
    if (t.degenerate()) ++st.degenerate_samples;
    st.degenerate_turns += t.degenerate_turns;
    for (std::size_t k = 0; k < t.labels.size(); ++k) {
      if (t.labels[k].low_information) ++st.low_information_turns;
      st.sink_tokens_removed += t.zeroed[k].size();
      for (std::size_t j = 0; j < gt.size(); ++j)
        if (t.labels[k].labels[j] == 1) {
          ++st.fg_tokens;
          st.fg_inside_gt += gt[j];
        }
    }
    const std::string rel = "targets/" + sample_file(s.id, "target.grid");
    write_grid(t.grid, out_dir / rel);
    s.attention = rebase(in, s.attention, out_dir);
    s.features = rebase(in, s.features, out_dir);
    s.queries = rebase(in, s.queries, out_dir);
    s.gt_mask = rebase(in, s.gt_mask, out_dir);
    s.pseudo_label = rel;
  }
  write_manifest(out, out_dir / "manifest.json");
  json j{{"targets", target_kind_name(opt.kind)},
         {"sink_removal", opt.sink_removal},
         {"tau_fg", opt.thresholds.tau_fg},
         {"tau_bg", opt.thresholds.tau_bg},
         {"samples", st.samples},
         {"degenerate_samples", st.degenerate_samples},
         {"degenerate_turns", st.degenerate_turns},
         {"low_information_turns", st.low_information_turns},
         {"sink_tokens_removed", st.sink_tokens_removed},
         {"fg_tokens", st.fg_tokens},
         {"fg_precision", st.fg_precision()}};
  write_text(out_dir / "pseudo_label.json", j.dump(2) + "\n");
  return st;
}

// ---- predictions -------------------------------------------------------------

void write_prediction_index(const PredictionIndex& idx, const fs::path& dir) {
  json samples = json::array();
  for (const auto& [id, file] : idx.samples) samples.push_back({{"id", id}, {"scores", file}});
  json j{{"source", idx.source}, {"height", idx.height}, {"width", idx.width}, {"turns", idx.turns},
         {"samples", samples}};
  write_text(dir / "predictions.json", j.dump(2) + "\n");
}

PredictionIndex read_prediction_index(const fs::path& dir) {
  const json j = read_json(dir / "predictions.json");
  PredictionIndex idx;
  idx.root = dir;
  idx.source = j.at("source").get<std::string>();
  idx.height = j.at("height").get<std::uint32_t>();
  idx.width = j.at("width").get<std::uint32_t>();
  idx.turns = j.at("turns").get<std::uint32_t>();
  for (const auto& s : j.at("samples"))
    idx.samples.emplace_back(s.at("id").get<std::uint64_t>(), s.at("scores").get<std::string>());
  return idx;
}

PredictionIndex run_predict(const StudentModel& model, const DatasetManifest& m, const fs::path& out_dir) {
  if (m.feature_dim != model.feature_dim())
    throw std::invalid_argument("feature dim mismatch: checkpoint expects " + std::to_string(model.feature_dim()) +
                                ", dataset has " + std::to_string(m.feature_dim));
  fs::create_directories(out_dir);
  PredictionIndex idx{"student", m.height, m.width, model.config().turns, {}, out_dir};
  for (const auto& s : m.samples) {
    if (s.turns != model.config().turns)
      throw std::invalid_argument("sample " + std::to_string(s.id) + " has " + std::to_string(s.turns) +
                                  " turns, checkpoint expects " + std::to_string(model.config().turns));
    const auto in = make_student_input(read_grid(m.resolve(s.features)), read_grid(m.resolve(s.queries)));
    const Mat logits = predict(model, in);
    std::vector<double> v(logits.data(), logits.data() + logits.size());
    const std::string rel = sample_file(s.id, "logits.grid");
    write_grid(Grid({s.turns, m.height, m.width}, std::move(v)), out_dir / rel);
    idx.samples.emplace_back(s.id, rel);
  }
  write_prediction_index(idx, out_dir);
  return idx;
}

PredictionIndex export_attention(const DatasetManifest& m, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  PredictionIndex idx{"attention", m.height, m.width, 1, {}, out_dir};
  for (const auto& s : m.samples) {
    idx.turns = s.turns;
    const std::string rel = sample_file(s.id, "attention.grid");
    fs::copy_file(m.resolve(s.attention), out_dir / rel, fs::copy_options::overwrite_existing);
    idx.samples.emplace_back(s.id, rel);
  }
  write_prediction_index(idx, out_dir);
  return idx;
}

// ---- post-process --------------------------------------------------------------

std::string roi_result_json(const RoIRecord& r, const std::string& cropped_file) {
  json boxes = json::array();
  for (const auto& b : r.result.boxes) boxes.push_back(box_json(b));
  json j{{"id", r.id},
         {"turn", r.turn},
         {"mode", upscale_mode_name(r.result.mode)},
         {"rows", r.result.rows},
         {"cols", r.result.cols},
         {"empty", r.result.empty},
         {"degenerate", r.degenerate},
         {"boxes", boxes},
         {"b_all", r.result.b_all ? box_json(*r.result.b_all) : json(nullptr)}};
  if (!cropped_file.empty()) j["cropped"] = cropped_file;
  return j.dump();
}

std::vector<RoIRecord> run_postprocess(const PredictionIndex& idx, const PostprocessOptions& opt,
                                       const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<RoIRecord> all;
  json index = json::array();
  for (const auto& [id, file] : idx.samples) {
    const Grid scores = read_grid(idx.root / file);
    if (scores.ndim() != 3 || scores.dim(1) != idx.height || scores.dim(2) != idx.width)
      throw std::invalid_argument("prediction " + file + " does not match the index shape");
    json turns = json::array();
    for (std::uint32_t t = 0; t < scores.dim(0); ++t) {
      const RealMap raw = real_map_from_grid(scores, t);
      RoIRecord rec;
      rec.id = id;
      rec.turn = t;
      rec.result = postprocess(raw, opt).result;
      if (opt.space == ScoreSpace::relative) rec.degenerate = !(*std::max_element(raw.data.begin(), raw.data.end()) > 0.0);
      std::string crop;
      if (rec.result.mode == UpscaleMode::mask && rec.result.b_all) {
        crop = sample_file(id, "turn" + std::to_string(t) + "_crop.grid");
        write_grid(to_grid(rec.result.cropped), out_dir / crop);
      }
      turns.push_back(json::parse(roi_result_json(rec, crop)));
      all.push_back(std::move(rec));
    }
    const std::string rel = sample_file(id, "roi.json");
    write_text(out_dir / rel, turns.dump(2) + "\n");
    index.push_back({{"id", id}, {"file", rel}});
  }
  json j{{"mode", upscale_mode_name(opt.mode)},
         {"space", score_space_name(opt.space)},
         {"sigma", opt.sigma},
         {"tau", opt.tau},
         {"height", idx.height},
         {"width", idx.width},
         {"samples", index}};
  write_text(out_dir / "rois.json", j.dump(2) + "\n");
  return all;
}

std::vector<RoIRecord> read_rois(const fs::path& dir) {
  const json idx = read_json(dir / "rois.json");
  std::vector<RoIRecord> out;
  try {
    for (const auto& s : idx.at("samples")) {
      const json turns = read_json(dir / s.at("file").get<std::string>());
      for (const auto& j : turns) {
        RoIRecord r;
        r.id = j.at("id").get<std::uint64_t>();
        r.turn = j.at("turn").get<std::uint32_t>();
        r.degenerate = j.at("degenerate").get<bool>();
        auto& res = r.result;
        res.mode = parse_upscale_mode(j.at("mode").get<std::string>());
        res.rows = j.at("rows").get<std::size_t>();
        res.cols = j.at("cols").get<std::size_t>();
        res.empty = j.at("empty").get<bool>();
        for (const auto& b : j.at("boxes")) res.boxes.push_back(box_from_json(b));
        if (!j.at("b_all").is_null()) res.b_all = box_from_json(j.at("b_all"));
        if (j.contains("cropped")) res.cropped = binary_mask_from_grid(read_grid(dir / j.at("cropped").get<std::string>()));
        out.push_back(std::move(r));
      }
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed RoI output in " + dir.string() + ": " + e.what());
  }
  return out;
}

// ---- eval ------------------------------------------------------------------------

EvalReport run_eval(const DatasetManifest& gt, const std::vector<RoIRecord>& rois) {
  if (rois.empty()) throw std::invalid_argument("nothing to evaluate: zero samples");
  std::map<std::uint64_t, const SampleRecord*> by_id;
  for (const auto& s : gt.samples) by_id[s.id] = &s;
  EvalReport rep;
  std::vector<double> sel;
  double box_sum = 0.0;
  for (const auto& r : rois) {
    if (r.degenerate) {
      ++rep.degenerate;
      continue;
    }
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) throw std::invalid_argument("sample " + std::to_string(r.id) + " missing from manifest");
    const BinaryMask truth = binary_mask_from_grid(read_grid(gt.resolve(it->second->gt_mask)));
    if (truth.rows != r.result.rows || truth.cols != r.result.cols)
      throw std::invalid_argument("sample " + std::to_string(r.id) + ": result grid differs from ground truth");
    const BinaryMask chosen = r.result.selection();
    EvalRow row{r.id, r.turn, iou(chosen, truth), 0.0, r.result.empty};
    const auto tb = mask_bounding_box(truth), cb = mask_bounding_box(chosen);
    row.iou_box = tb && cb ? iou(*tb, *cb) : (!tb && !cb ? 1.0 : 0.0);
    sel.push_back(row.iou_selection);
    box_sum += row.iou_box;
    rep.rows.push_back(row);
  }
  if (!rep.rows.empty()) {
    double s = 0.0;
    for (double v : sel) s += v;
    rep.mean_selection = s / static_cast<double>(sel.size());
    rep.median_selection = median(sel);
    rep.mean_box = box_sum / static_cast<double>(rep.rows.size());
  }
  return rep;
}

void write_eval_csv(const EvalReport& r, const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "id,turn,iou_selection,iou_box,empty\n" << std::setprecision(17);
  for (const auto& row : r.rows)
    f << row.id << ',' << row.turn << ',' << row.iou_selection << ',' << row.iou_box << ',' << (row.empty ? 1 : 0)
      << '\n';
}

// ---- arms ------------------------------------------------------------------------------

Arm parse_arm(const std::string& s) {
  for (auto a : all_arms())
    if (s == arm_name(a)) return a;
  throw std::invalid_argument("unknown arm '" + s +
                              "' (expected raw-attention, attn-prediction, label-assign, remove-sink, "
                              "masked-upscale or pre-smoothing)");
}

const char* arm_name(Arm a) {
  switch (a) {
    case Arm::raw_attention: return "raw-attention";
    case Arm::attn_prediction: return "attn-prediction";
    case Arm::label_assign: return "label-assign";
    case Arm::remove_sink: return "remove-sink";
    case Arm::masked_upscale: return "masked-upscale";
    case Arm::pre_smoothing: return "pre-smoothing";
  }
  return "?";
}

std::vector<Arm> all_arms() {
  return {Arm::raw_attention, Arm::attn_prediction, Arm::label_assign,
          Arm::remove_sink,   Arm::masked_upscale,  Arm::pre_smoothing};
}

StudentConfig benchmark_student_config() {
  StudentConfig c;
  c.batch_size = 16;
  c.epochs = 4;
  c.peak_lr = 3e-3;
  return c;
}

ArmRecipe arm_recipe(Arm a, const BenchConfig& cfg) {
  ArmRecipe r;
  r.targets.thresholds = cfg.thresholds;
  r.post.sigma = cfg.post_sigma;
  r.post.space = ScoreSpace::sigmoid;
  r.post.tau = cfg.student_tau;
  switch (a) {
    case Arm::raw_attention:
      r.trains = false;
      r.post.space = ScoreSpace::relative;
      r.post.tau = cfg.relative_tau;
      r.post.mode = UpscaleMode::mask;
      break;
    case Arm::attn_prediction:
      r.targets.kind = TargetKind::regression;
      r.targets.sink_removal = false;
      r.loss = LossKind::mse;
      r.post.space = ScoreSpace::sigmoid_relative;
      r.post.tau = cfg.relative_tau;
      r.post.mode = UpscaleMode::box;
      r.model_key = "regression";
      break;
    case Arm::label_assign:
      r.targets.sink_removal = false;
      r.post.mode = UpscaleMode::box;
      r.model_key = "labels";
      break;
    case Arm::remove_sink:
      r.post.mode = UpscaleMode::box;
      r.model_key = "labels-sink-removed";
      break;
    case Arm::masked_upscale:
      r.post.mode = UpscaleMode::mask;
      r.model_key = "labels-sink-removed";
      break;
    case Arm::pre_smoothing:
      r.targets.kind = TargetKind::pre_smoothed;
      r.targets.smooth_sigma = cfg.pre_sigma;
      r.post.sigma = 0.0;
      r.post.mode = UpscaleMode::mask;
      r.model_key = "pre-smoothed";
      break;
  }
  return r;
}

// ---- run summaries ---------------------------------------------------------------------

void write_run_summary(const RunSummary& s, const fs::path& path) {
  json j{{"arm", s.arm},
         {"seed", s.seed},
         {"height", s.height},
         {"width", s.width},
         {"eval_rows", s.eval_rows},
         {"mean_iou", s.mean_iou},
         {"median_iou", s.median_iou},
         {"mean_box_iou", s.mean_box_iou},
         {"initial_loss", s.initial_loss},
         {"final_loss", s.final_loss},
         {"converged_loss", s.converged_loss},
         {"degenerate_train", s.degenerate_train},
         {"degenerate_eval", s.degenerate_eval},
         {"checkpoint_hash", s.checkpoint_hash}};
  write_text(path, j.dump(2) + "\n");
}

std::optional<RunSummary> read_run_summary(const fs::path& path, std::string* error) {
  try {
    const json j = read_json(path);
    RunSummary s;
    s.arm = j.at("arm").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.height = j.at("height").get<std::uint32_t>();
    s.width = j.at("width").get<std::uint32_t>();
    s.eval_rows = j.at("eval_rows").get<std::size_t>();
    s.mean_iou = j.at("mean_iou").get<double>();
    s.median_iou = j.at("median_iou").get<double>();
    s.mean_box_iou = j.at("mean_box_iou").get<double>();
    s.initial_loss = j.at("initial_loss").get<double>();
    s.final_loss = j.at("final_loss").get<double>();
    s.converged_loss = j.at("converged_loss").get<double>();
    s.degenerate_train = j.at("degenerate_train").get<std::size_t>();
    s.degenerate_eval = j.at("degenerate_eval").get<std::size_t>();
    s.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
    return s;
  } catch (const std::exception& e) {
    if (error) *error = e.what();
    return std::nullopt;
  }
}

std::vector<RunSummary> collect_runs(const std::vector<fs::path>& dirs, std::vector<std::string>* warnings) {
  std::vector<fs::path> files;
  for (const auto& d : dirs) {
    if (fs::is_regular_file(d)) {
      files.push_back(d);
      continue;
    }
    if (!fs::is_directory(d)) {
      if (warnings) warnings->push_back("skipping " + d.string() + ": not a directory");
      continue;
    }
    if (fs::exists(d / "run.json")) {
      files.push_back(d / "run.json");
      continue;
    }
    for (const auto& e : fs::recursive_directory_iterator(d))
      if (e.is_regular_file() && e.path().filename() == "run.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RunSummary> runs;
  for (const auto& f : files) {
    std::string err;
    if (auto s = read_run_summary(f, &err)) runs.push_back(std::move(*s));
    else if (warnings) warnings->push_back("skipping malformed run " + f.string() + ": " + err);
  }
  return runs;
}

void write_report_csv(const std::vector<RunSummary>& runs, const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "arm,seed,height,width,eval_rows,mean_iou,median_iou,mean_box_iou,initial_loss,final_loss,converged_loss,"
       "degenerate_train,degenerate_eval\n"
    << std::setprecision(10);
  for (const auto& s : runs)
    f << s.arm << ',' << s.seed << ',' << s.height << ',' << s.width << ',' << s.eval_rows << ',' << s.mean_iou << ','
      << s.median_iou << ',' << s.mean_box_iou << ',' << s.initial_loss << ',' << s.final_loss << ','
      << s.converged_loss << ',' << s.degenerate_train << ',' << s.degenerate_eval << '\n';
}

std::uint64_t hash_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, dir).generic_string();
    h = fnv1a64({reinterpret_cast<const std::uint8_t*>(rel.data()), rel.size()}, h);
    const std::uint64_t fh = hash_file(f);
    h = fnv1a64({reinterpret_cast<const std::uint8_t*>(&fh), sizeof fh}, h);
  }
  return h;
}

// ---- bench ---------------------------------------------------------------------------------

std::vector<RunSummary> run_bench(const BenchConfig& cfg, const fs::path& work_dir,
                                  const std::function<void(const RunSummary&)>& progress) {
  cfg.teacher.validate();
  cfg.student.validate();
  cfg.thresholds.validate();
  if (cfg.train_samples == 0 || cfg.eval_samples == 0) throw std::invalid_argument("bench needs train and eval samples");
  std::vector<RunSummary> out;
  for (const auto seed : cfg.seeds) {
    const fs::path sd = work_dir / ("seed_" + std::to_string(seed));
    TeacherConfig tc = cfg.teacher;
    tc.seed = seed;
    const auto train = generate_dataset(tc, cfg.train_samples, sd / "data" / "train");
    const auto eval = generate_dataset(tc, cfg.eval_samples, sd / "data" / "eval", cfg.train_samples);
    StudentConfig sc = cfg.student;
    sc.seed = seed;
    sc.turns = tc.turns;

    struct Trained {
      fs::path checkpoint;
      TrainReport report;
      std::size_t degenerate = 0;
    };
    std::map<std::string, Trained> trained;

    for (const auto arm : cfg.arms) {
      const auto recipe = arm_recipe(arm, cfg);
      const fs::path ad = sd / arm_name(arm);
      fs::create_directories(ad);
      RunSummary s;
      s.arm = arm_name(arm);
      s.seed = seed;
      s.height = tc.height;
      s.width = tc.width;
      PredictionIndex pred;
      if (recipe.trains) {
        auto it = trained.find(recipe.model_key);
        if (it == trained.end()) {
          const auto stats = run_pseudo_label(train, recipe.targets, ad / "labels");
          StudentConfig acfg = sc;
          acfg.loss = recipe.loss;
          Trained t;
          t.checkpoint = ad / "checkpoint";
          t.report = distill_train(read_manifest(ad / "labels" / "manifest.json"), acfg, cfg.thresholds, t.checkpoint);
          t.degenerate = stats.degenerate_samples;
          it = trained.emplace(recipe.model_key, std::move(t)).first;
        }
        const auto& t = it->second;
        pred = run_predict(load_checkpoint(t.checkpoint), eval, ad / "predictions");
        s.initial_loss = t.report.initial_loss;
        s.final_loss = t.report.running_loss;
        s.converged_loss = t.report.converged_loss;
        s.degenerate_train = t.degenerate;
        s.checkpoint_hash = hex64(hash_tree(t.checkpoint));
      } else {
        pred = export_attention(eval, ad / "predictions");
      }
      const auto rois = run_postprocess(pred, recipe.post, ad / "rois");
      const auto rep = run_eval(eval, rois);
      write_eval_csv(rep, ad / "eval.csv");
      s.eval_rows = rep.rows.size();
      s.mean_iou = rep.mean_selection;
      s.median_iou = rep.median_selection;
      s.mean_box_iou = rep.mean_box;
      s.degenerate_eval = rep.degenerate;
      write_run_summary(s, ad / "run.json");
      if (progress) progress(s);
      out.push_back(std::move(s));
    }
  }
  write_report_csv(out, work_dir / "report.csv");
  return out;
}

}  // namespace sdrpn
