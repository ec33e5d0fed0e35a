#include "sdrpn/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace sdrpn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kShuffleStream = 0x5f0ff1e000000007ULL;

json config_to_json(const StudentConfig& c) {
  return json{{"d_model", c.d_model},         {"heads", c.heads},
              {"mlp_ratio", c.mlp_ratio},     {"depth", c.depth},
              {"frozen", c.frozen},           {"trainable", c.trainable},
              {"turns", c.turns},             {"peak_lr", c.peak_lr},
              {"beta1", c.beta1},             {"beta2", c.beta2},
              {"eps", c.eps},                 {"weight_decay", c.weight_decay},
              {"warmup_ratio", c.warmup_ratio}, {"epochs", c.epochs},
              {"batch_size", c.batch_size},   {"total_steps", c.total_steps},
              {"loss", loss_kind_name(c.loss)}, {"seed", c.seed}};
}

StudentConfig config_from_json(const json& j) {
  StudentConfig c;
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::remove_reference_t<decltype(field)>>();
  };
  get("d_model", c.d_model);
  get("heads", c.heads);
  get("mlp_ratio", c.mlp_ratio);
  get("depth", c.depth);
  get("frozen", c.frozen);
  get("trainable", c.trainable);
  get("turns", c.turns);
  get("peak_lr", c.peak_lr);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("eps", c.eps);
  get("weight_decay", c.weight_decay);
  get("warmup_ratio", c.warmup_ratio);
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("total_steps", c.total_steps);
  get("seed", c.seed);
  if (j.contains("loss")) c.loss = parse_loss_kind(j.at("loss").get<std::string>());
  return c;
}

LossTerms example_loss(const StudentModel& m, const TrainingExample& e, LossKind kind) {
  const Mat logits = predict_from_frozen(m, e.frozen, e.visual_tokens);
  return kind == LossKind::bce ? masked_bce_terms(logits, e.targets.targets, e.targets.valid)
                               : masked_mse_terms(logits, e.targets.targets, e.targets.valid);
}

}  // namespace

std::string student_config_json(const StudentConfig& cfg) { return config_to_json(cfg).dump(2); }

StudentConfig student_config_from_json(const std::string& text) { return config_from_json(json::parse(text)); }

std::vector<TrainingExample> prepare_examples(const StudentModel& model, const DatasetManifest& m,
                                              const TargetOptions& fallback, std::size_t* skipped) {
  if (m.feature_dim != model.feature_dim())
    throw std::invalid_argument("feature dim mismatch: model expects " + std::to_string(model.feature_dim()) +
                                ", dataset has " + std::to_string(m.feature_dim));
  std::vector<TrainingExample> out;
  std::size_t skip = 0;
  for (const auto& s : m.samples) {
    if (s.turns != model.config().turns)
      throw std::invalid_argument("sample " + std::to_string(s.id) + " has " + std::to_string(s.turns) +
                                  " turns, model expects " + std::to_string(model.config().turns));
    const Grid tgrid = s.pseudo_label ? read_grid(m.resolve(*s.pseudo_label)) : make_targets(m, s, fallback).grid;
    if (tgrid.ndim() != 3 || tgrid.dim(0) != s.turns || tgrid.dim(1) != m.height || tgrid.dim(2) != m.width)
      throw std::invalid_argument("sample " + std::to_string(s.id) + ": target grid shape does not match manifest");
    TrainingExample e;
    e.id = s.id;
    e.targets = example_targets_from_grid(tgrid);
    if (e.targets.valid.sum() == 0.0) {
      ++skip;
      continue;
    }
    const StudentInput in = make_student_input(read_grid(m.resolve(s.features)), read_grid(m.resolve(s.queries)));
    e.visual_tokens = static_cast<std::size_t>(in.visual.rows());
    e.frozen = frozen_backbone(model, in);
    out.push_back(std::move(e));
  }
  if (skipped) *skipped = skip;
  return out;
}

double dataset_loss(const StudentModel& model, const std::vector<TrainingExample>& ex, LossKind kind) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& e : ex) {
    const auto t = example_loss(model, e, kind);
    sum += t.sum;
    count += t.count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

TrainReport train_student(StudentModel& model, const std::vector<TrainingExample>& ex, const StudentConfig& cfg_in) {
  if (ex.empty()) throw std::invalid_argument("no trainable samples (every sample is degenerate or the set is empty)");
  StudentConfig cfg = cfg_in;
  cfg.validate();
#if defined(__GLIBC__)
  // Attention buffers are ~0.5 MB each; keep them on the heap instead of mmap/munmap per step.
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  const std::uint64_t n = ex.size();
  const std::uint64_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  if (cfg.total_steps == 0) cfg.total_steps = per_epoch * cfg.epochs;

  TrainReport rep;
  rep.examples = ex.size();
  rep.steps = cfg.total_steps;
  rep.initial_loss = dataset_loss(model, ex, cfg.loss);

  TrainingState state = TrainingState::init(model);
  Gradients grads;
  std::vector<std::size_t> order(n);
  std::size_t cursor = n;
  std::uint64_t epoch = 0;
  const RngStream shuffle_root(cfg.seed, kShuffleStream);

  for (std::uint64_t step = 1; step <= cfg.total_steps; ++step) {
    grads.zero_like(model);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::uint32_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == n) {
        if (b > 0) break;  // a batch never straddles epochs
        std::iota(order.begin(), order.end(), 0);
        RngStream rng = shuffle_root.derive(epoch++);
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      const auto& e = ex[order[cursor++]];
      const auto t = forward_backward(model, e.frozen, e.visual_tokens, e.targets, cfg.loss, grads);
      sum += t.sum;
      count += t.count;
    }
    const double loss = count ? sum / static_cast<double>(count) : 0.0;
    if (count) grads.scale(1.0 / static_cast<double>(count));
    adamw_step(model, state, grads, cfg);
    rep.log.push_back({step, state.lr, loss, count});
  }

  const std::size_t tail = std::max<std::size_t>(1, (rep.log.size() + 9) / 10);
  double acc = 0.0;
  for (std::size_t i = rep.log.size() - tail; i < rep.log.size(); ++i) acc += rep.log[i].loss;
  rep.running_loss = acc / static_cast<double>(tail);
  rep.converged_loss = dataset_loss(model, ex, cfg.loss);
  rep.frozen_hash = model.frozen_hash();
  return rep;
}

TrainReport distill_train(const DatasetManifest& m, const StudentConfig& cfg, const LabelThresholds& thresholds,
                          const fs::path& out, const std::optional<StudentModel>& teacher) {
  cfg.validate();
  if (m.samples.empty()) throw std::invalid_argument("manifest has no samples");
  StudentModel student = StudentModel::from_teacher(
      teacher ? *teacher : StudentModel::init_teacher(cfg, m.feature_dim, cfg.seed), cfg);
  TargetOptions opt;
  opt.thresholds = thresholds;
  std::size_t skipped = 0;
  const auto ex = prepare_examples(student, m, opt, &skipped);
  const std::uint64_t before = student.frozen_hash();
  TrainReport rep = train_student(student, ex, cfg);
  rep.skipped = skipped;
  if (rep.frozen_hash != before) throw std::logic_error("frozen parameters changed during training");
  save_checkpoint(student, rep.steps, out);
  write_loss_log(rep.log, out / "loss.csv");
  return rep;
}

void save_checkpoint(const StudentModel& model, std::uint64_t step, const fs::path& dir) {
  fs::create_directories(dir / "params");
  json params = json::array();
  for (const auto& p : model.params()) {
    std::vector<double> v(p.value.data(), p.value.data() + p.value.size());
    write_grid(Grid({static_cast<std::uint32_t>(p.value.rows()), static_cast<std::uint32_t>(p.value.cols())},
                    std::move(v)),
               dir / "params" / (p.name + ".grid"));
    params.push_back({{"name", p.name}, {"trainable", p.trainable}, {"shape", {p.value.rows(), p.value.cols()}}});
  }
  json meta{{"format", "sdrpn-checkpoint"},
            {"version", 1},
            {"config", config_to_json(model.config())},
            {"feature_dim", model.feature_dim()},
            {"step", step},
            {"frozen_hash", hex64(model.frozen_hash())},
            {"params", params}};
  std::ofstream f(dir / "meta.json", std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + (dir / "meta.json").string());
  f << meta.dump(2) << "\n";
}

StudentModel load_checkpoint(const fs::path& dir, std::uint64_t* step) {
  std::ifstream f(dir / "meta.json", std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint metadata not found: " + (dir / "meta.json").string());
  json meta;
  try {
    meta = json::parse(f);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed checkpoint metadata " + (dir / "meta.json").string() + ": " + e.what());
  }
  const StudentConfig cfg = config_from_json(meta.at("config"));
  StudentModel m = StudentModel::skeleton(cfg, meta.at("feature_dim").get<std::uint32_t>());
  for (auto& p : m.params()) {
    const Grid g = read_grid(dir / "params" / (p.name + ".grid"));
    if (g.ndim() != 2 || g.dim(0) != p.value.rows() || g.dim(1) != p.value.cols())
      throw std::runtime_error("checkpoint parameter " + p.name + " has the wrong shape");
    const auto v = g.to_f64();
    p.value = Eigen::Map<const Mat>(v.data(), p.value.rows(), p.value.cols());
  }
  if (hex64(m.frozen_hash()) != meta.at("frozen_hash").get<std::string>())
    throw std::runtime_error("checkpoint frozen-parameter hash mismatch in " + dir.string());
  if (step) *step = meta.at("step").get<std::uint64_t>();
  return m;
}

void write_loss_log(const std::vector<StepLog>& log, const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "step,lr,loss,valid_tokens\n" << std::setprecision(17);
  for (const auto& r : log) f << r.step << ',' << r.lr << ',' << r.loss << ',' << r.valid_tokens << '\n';
}

}  // namespace sdrpn
