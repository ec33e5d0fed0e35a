#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sdrpn/grid.hpp"
#include "sdrpn/noise.hpp"
#include "sdrpn/pipeline.hpp"
#include "sdrpn/pseudo_label.hpp"
#include "sdrpn/roi.hpp"
#include "sdrpn/teacher.hpp"
#include "sdrpn/train.hpp"

namespace py = pybind11;
using namespace sdrpn;

namespace {

template <class T>
py::array_t<T> to_array(std::span<const T> v, const Shape& shape) {
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  py::array_t<T> out(dims);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::array grid_to_array(const Grid& g) {
  switch (g.dtype()) {
    case DType::f32: return to_array(g.values<float>(), g.shape());
    case DType::f64: return to_array(g.values<double>(), g.shape());
    case DType::i8: return to_array(g.values<std::int8_t>(), g.shape());
  }
  throw std::logic_error("unknown dtype");
}

template <class T>
Grid grid_from(const py::array& a) {
  const auto c = py::array_t<T, py::array::c_style | py::array::forcecast>::ensure(a);
  Shape shape;
  for (py::ssize_t i = 0; i < c.ndim(); ++i) shape.push_back(static_cast<std::uint32_t>(c.shape(i)));
  return Grid(shape, std::vector<T>(c.data(), c.data() + c.size()));
}

Grid array_to_grid(const py::array& a) {
  const auto kind = a.dtype().kind();
  const auto size = a.dtype().itemsize();
  if (kind == 'f' && size == 4) return grid_from<float>(a);
  if (kind == 'f') return grid_from<double>(a);
  if (kind == 'i' && size == 1) return grid_from<std::int8_t>(a);
  throw py::type_error("grids hold float32, float64 or int8 arrays");
}

RealMap to_map(const py::array& a) {
  const auto c = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(a);
  if (!c || c.ndim() != 2) throw py::value_error("expected a 2-D array");
  return RealMap(c.shape(0), c.shape(1), std::vector<double>(c.data(), c.data() + c.size()));
}

template <class T>
py::array_t<T> from_field(const Field2D<T>& f) {
  return to_array<T>(std::span<const T>(f.data), {static_cast<std::uint32_t>(f.rows), static_cast<std::uint32_t>(f.cols)});
}

py::tuple box_tuple(const TokenBox& b) { return py::make_tuple(b.r0, b.c0, b.r1, b.c1); }

TokenBox box_from(const py::sequence& s) {
  if (py::len(s) != 4) throw py::value_error("a box is (r0, c0, r1, c1)");
  return TokenBox{s[0].cast<std::size_t>(), s[1].cast<std::size_t>(), s[2].cast<std::size_t>(),
                  s[3].cast<std::size_t>()};
}

// Keyword overrides for config structs: unknown keys are errors.
template <class Cfg>
using Setter = std::function<void(Cfg&, const py::handle&)>;

template <class Cfg>
void apply_overrides(Cfg& cfg, const py::dict& kw, const std::map<std::string, Setter<Cfg>>& setters) {
  for (const auto& [k, v] : kw) {
    const auto key = py::cast<std::string>(k);
    const auto it = setters.find(key);
    if (it == setters.end()) throw py::key_error("unknown option '" + key + "'");
    it->second(cfg, v);
  }
}

template <class Cfg, class T>
std::pair<const std::string, Setter<Cfg>> field(const char* name, T Cfg::*m) {
  return {name, [m](Cfg& c, const py::handle& v) { c.*m = v.cast<T>(); }};
}

const std::map<std::string, Setter<TeacherConfig>>& teacher_setters() {
  static const std::map<std::string, Setter<TeacherConfig>> s{
      field("height", &TeacherConfig::height),
      field("width", &TeacherConfig::width),
      field("feature_dim", &TeacherConfig::feature_dim),
      field("heads", &TeacherConfig::heads),
      field("responses", &TeacherConfig::responses),
      field("turns", &TeacherConfig::turns),
      field("sink_count", &TeacherConfig::sink_count),
      field("sink_multiplier", &TeacherConfig::sink_multiplier),
      field("sink_boost", &TeacherConfig::sink_boost),
      field("signal", &TeacherConfig::signal),
      field("drop_fraction", &TeacherConfig::drop_fraction),
      field("noise_scale", &TeacherConfig::noise_scale),
      field("noise_blur", &TeacherConfig::noise_blur),
      field("feature_signal", &TeacherConfig::feature_signal),
      field("concepts", &TeacherConfig::concepts),
      field("distractors", &TeacherConfig::distractors),
      {"noise", [](TeacherConfig& c, const py::handle& v) { c.noise = parse_noise_model(v.cast<std::string>()); }},
  };
  return s;
}

const std::map<std::string, Setter<StudentConfig>>& student_setters() {
  static const std::map<std::string, Setter<StudentConfig>> s{
      field("d_model", &StudentConfig::d_model),
      field("heads", &StudentConfig::heads),
      field("mlp_ratio", &StudentConfig::mlp_ratio),
      field("depth", &StudentConfig::depth),
      field("frozen", &StudentConfig::frozen),
      field("trainable", &StudentConfig::trainable),
      field("peak_lr", &StudentConfig::peak_lr),
      field("beta1", &StudentConfig::beta1),
      field("beta2", &StudentConfig::beta2),
      field("eps", &StudentConfig::eps),
      field("weight_decay", &StudentConfig::weight_decay),
      field("warmup_ratio", &StudentConfig::warmup_ratio),
      field("epochs", &StudentConfig::epochs),
      field("batch_size", &StudentConfig::batch_size),
      field("total_steps", &StudentConfig::total_steps),
      field("seed", &StudentConfig::seed),
      {"loss", [](StudentConfig& c, const py::handle& v) { c.loss = parse_loss_kind(v.cast<std::string>()); }},
  };
  return s;
}

LabelThresholds thresholds(double tau_fg, double tau_bg, std::optional<double> tau_norm) {
  LabelThresholds t;
  t.tau_fg = tau_fg;
  t.tau_bg = tau_bg;
  if (tau_norm) t.norm = NormThreshold::absolute(*tau_norm);
  t.validate();
  return t;
}

py::dict roi_dict(const RoIResult& r) {
  py::dict d;
  d["mode"] = upscale_mode_name(r.mode);
  d["empty"] = r.empty;
  py::list boxes;
  for (const auto& b : r.boxes) boxes.append(box_tuple(b));
  d["boxes"] = boxes;
  d["b_all"] = r.b_all ? py::object(box_tuple(*r.b_all)) : py::object(py::none());
  d["selection"] = from_field(r.selection());
  if (r.mode == UpscaleMode::mask && r.b_all) d["cropped"] = from_field(r.cropped);
  return d;
}

py::dict train_dict(const TrainReport& r) {
  py::dict d;
  d["examples"] = r.examples;
  d["skipped"] = r.skipped;
  d["steps"] = r.steps;
  d["initial_loss"] = r.initial_loss;
  d["final_loss"] = r.running_loss;
  d["converged_loss"] = r.converged_loss;
  py::list losses;
  for (const auto& s : r.log) losses.append(s.loss);
  d["losses"] = losses;
  return d;
}

}  // namespace

PYBIND11_MODULE(_sdrpn, m) {
  m.doc() = "Self-distilled region proposals on synthetic attention data";

  py::register_exception<GridError>(m, "GridError", PyExc_ValueError);

  m.def("read_grid", [](const std::filesystem::path& p) { return grid_to_array(read_grid(p)); }, py::arg("path"),
        "Read a GRID file into a numpy array (float32, float64 or int8).");
  m.def("write_grid", [](const std::filesystem::path& p, const py::array& a) { write_grid(array_to_grid(a), p); },
        py::arg("path"), py::arg("array"));
  m.def("encode_grid",
        [](const py::array& a) {
          const auto b = encode_grid(array_to_grid(a));
          return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
        },
        py::arg("array"));

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out, std::size_t num, std::uint64_t seed, std::uint64_t first_id,
         const py::kwargs& kw) {
        TeacherConfig cfg;
        cfg.seed = seed;
        apply_overrides(cfg, kw, teacher_setters());
        cfg.validate();
        generate_dataset(cfg, num, out, first_id);
        return out / "manifest.json";
      },
      py::arg("out"), py::arg("num") = 256, py::arg("seed") = 1, py::arg("first_id") = 0,
      "Write a synthetic dataset; keyword arguments override teacher settings (height, width, sink_count, ...).");

  m.def(
      "assign_labels",
      [](const py::array& attention, double tau_fg, double tau_bg) {
        return from_field(assign_labels(to_map(attention), thresholds(tau_fg, tau_bg, std::nullopt)).labels);
      },
      py::arg("attention"), py::arg("tau_fg") = 0.2, py::arg("tau_bg") = 0.1,
      "Labels 1 / 0 / -1 (foreground, background, ignored) from a 2-D attention map.");

  m.def(
      "remove_sink_tokens",
      [](const py::array& attention, const py::array& features, std::optional<double> tau_norm, double k) {
        const auto policy = tau_norm ? NormThreshold::absolute(*tau_norm) : NormThreshold::automatic(k);
        const auto r = remove_sink_tokens(to_map(attention), array_to_grid(features), policy);
        return py::make_tuple(from_field(r.map), r.zeroed, r.tau_norm);
      },
      py::arg("attention"), py::arg("features"), py::arg("tau_norm") = py::none(), py::arg("k") = 3.0,
      "Zero attention on high-norm tokens; returns (map, zeroed flat indices, threshold used).");

  m.def(
      "postprocess",
      [](const py::array& scores, const std::string& space, double sigma, double tau, const std::string& mode) {
        PostprocessOptions o;
        o.space = parse_score_space(space);
        o.sigma = sigma;
        o.tau = tau;
        o.mode = parse_upscale_mode(mode);
        return roi_dict(postprocess(to_map(scores), o).result);
      },
      py::arg("scores"), py::arg("space") = "sigmoid", py::arg("sigma") = 1.0, py::arg("tau") = 0.5,
      py::arg("mode") = "mask", "Smooth, binarize, find 4-connected regions and upscale to boxes or a masked box.");

  m.def("box_iou", [](const py::sequence& a, const py::sequence& b) { return iou(box_from(a), box_from(b)); },
        py::arg("a"), py::arg("b"), "IoU of inclusive token boxes (r0, c0, r1, c1).");

  m.def(
      "pseudo_label",
      [](const std::filesystem::path& manifest, const std::filesystem::path& out, double tau_fg, double tau_bg,
         std::optional<double> tau_norm, bool sink_removal, const std::string& target, double smooth_sigma) {
        TargetOptions o;
        o.thresholds = thresholds(tau_fg, tau_bg, tau_norm);
        o.sink_removal = sink_removal;
        o.kind = parse_target_kind(target);
        o.smooth_sigma = smooth_sigma;
        const auto s = run_pseudo_label(read_manifest(manifest), o, out);
        py::dict d;
        d["samples"] = s.samples;
        d["degenerate_samples"] = s.degenerate_samples;
        d["sink_tokens_removed"] = s.sink_tokens_removed;
        d["fg_precision"] = s.fg_precision();
        d["manifest"] = out / "manifest.json";
        return d;
      },
      py::arg("manifest"), py::arg("out"), py::arg("tau_fg") = 0.2, py::arg("tau_bg") = 0.1,
      py::arg("tau_norm") = py::none(), py::arg("sink_removal") = true, py::arg("target") = "labels",
      py::arg("smooth_sigma") = 1.0);

  m.def(
      "train",
      [](const std::filesystem::path& manifest, const std::filesystem::path& out, const std::string& preset,
         const py::kwargs& kw) {
        if (preset != "bench" && preset != "default") throw py::value_error("preset is 'default' or 'bench'");
        StudentConfig cfg = preset == "bench" ? benchmark_student_config() : StudentConfig{};
        apply_overrides(cfg, kw, student_setters());
        const auto mf = read_manifest(manifest);
        if (!mf.samples.empty()) cfg.turns = mf.samples.front().turns;
        cfg.validate();
        TrainReport rep;
        {
          py::gil_scoped_release release;
          rep = distill_train(mf, cfg, LabelThresholds{}, out);
        }
        return train_dict(rep);
      },
      py::arg("manifest"), py::arg("out"), py::arg("preset") = "default",
      "Train the student on a pseudo-labelled manifest and write a checkpoint; keyword arguments override "
      "student settings (d_model, epochs, peak_lr, ...).");

  m.def(
      "predict",
      [](const std::filesystem::path& manifest, const std::filesystem::path& checkpoint,
         const std::filesystem::path& out) {
        return run_predict(load_checkpoint(checkpoint), read_manifest(manifest), out).samples.size();
      },
      py::arg("manifest"), py::arg("checkpoint"), py::arg("out"));

  m.def(
      "roi_logits",
      [](const std::filesystem::path& checkpoint, const py::array& features, const py::array& queries) {
        const auto model = load_checkpoint(checkpoint);
        const auto in = make_student_input(array_to_grid(features), array_to_grid(queries));
        const Mat z = predict(model, in);
        py::array_t<double> outarr({static_cast<py::ssize_t>(z.rows()), static_cast<py::ssize_t>(z.cols())});
        std::copy(z.data(), z.data() + z.size(), outarr.mutable_data());
        return outarr;
      },
      py::arg("checkpoint"), py::arg("features"), py::arg("queries"),
      "RoI logits [turns, H*W] for one sample's features [H, W, d] and queries [turns, d].");

  m.def(
      "verify_theory",
      [](const std::string& model, std::size_t n, std::uint64_t seed, const py::kwargs& kw) {
        NoiseSpec s;
        s.model = parse_label_noise(model);
        for (const auto& [k, v] : kw) {
          const auto key = py::cast<std::string>(k);
          if (key == "rho0") s.rho0 = v.cast<double>();
          else if (key == "rho1") s.rho1 = v.cast<double>();
          else if (key == "rho") s.rho = v.cast<double>();
          else if (key == "mu0") s.mu0 = v.cast<double>();
          else if (key == "mu1") s.mu1 = v.cast<double>();
          else if (key == "noise_scale") s.noise_scale = v.cast<double>();
          else if (key == "slope") s.slope = v.cast<double>();
          else if (key == "constant") s.constant = v.cast<double>();
          else if (key == "posterior") s.posterior = parse_posterior(v.cast<std::string>());
          else if (key == "feature") s.feature = parse_feature_dist(v.cast<std::string>());
          else throw py::key_error("unknown option '" + key + "'");
        }
        s.validate();
        const auto r = verify_theory(s, n, seed);
        py::dict d;
        d["pass"] = r.pass();
        d["within_fraction"] = r.affinity.within_fraction;
        d["max_abs_gap"] = r.affinity.max_abs_gap;
        d["mse_raw"] = r.variance.mse_raw;
        d["mse_fit"] = r.variance.mse_fit;
        d["equality_case"] = r.variance.equality_case;
        d["noise_free"] = r.variance.noise_free;
        d["monotone"] = r.variance.monotone;
        if (r.classified) {
          d["error_raw"] = r.classification.error_raw;
          d["error_fit"] = r.classification.error_fit;
          d["bayes_error"] = r.classification.bayes_error;
        }
        return d;
      },
      py::arg("model") = "ccn", py::arg("n") = 1000000, py::arg("seed") = 1,
      "Monte Carlo checks of the label-noise model; keyword arguments set rho0, rho1, rho, mu0, mu1, noise_scale, "
      "slope, constant, posterior, feature.");

  m.def("hash_tree", [](const std::filesystem::path& dir) { return hex64(hash_tree(dir)); }, py::arg("dir"),
        "Content hash of every file below a directory.");
}
