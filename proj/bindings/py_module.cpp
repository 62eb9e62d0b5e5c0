#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <sstream>

#include "hvc/augment.hpp"
#include "hvc/checkpoint.hpp"
#include "hvc/config.hpp"
#include "hvc/ensemble.hpp"
#include "hvc/errors.hpp"
#include "hvc/mnist.hpp"
#include "hvc/model.hpp"
#include "hvc/optim.hpp"
#include "hvc/predictions.hpp"
#include "hvc/train.hpp"

namespace py = pybind11;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using U8Array =
    py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

hvc::Tensor<float> tensor_from(const F32Array& a) {
  hvc::Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i)
    shape[i] = static_cast<std::size_t>(a.shape(i));
  hvc::Tensor<float> t(shape);
  std::memcpy(t.data(), a.data(), sizeof(float) * t.size());
  return t;
}

py::array_t<float> array_from(const hvc::Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> a(shape);
  std::memcpy(a.mutable_data(), t.data(), sizeof(float) * t.size());
  return a;
}

hvc::data::Image image_from(const U8Array& a) {
  if (a.ndim() != 2 || a.shape(0) != 28 || a.shape(1) != 28)
    throw hvc::DimensionError("image must be 28x28 uint8");
  hvc::data::Image im;
  std::memcpy(im.data(), a.data(), im.size());
  return im;
}

py::array_t<std::uint8_t> array_from_image(const hvc::data::Image& im) {
  py::array_t<std::uint8_t> a({py::ssize_t{28}, py::ssize_t{28}});
  std::memcpy(a.mutable_data(), im.data(), im.size());
  return a;
}

hvc::data::ImageSet set_from(const U8Array& images, const U8Array& labels) {
  if (images.ndim() != 3 || images.shape(1) != 28 || images.shape(2) != 28)
    throw hvc::DimensionError("images must be [n,28,28] uint8");
  if (labels.ndim() != 1 || labels.shape(0) != images.shape(0))
    throw hvc::DimensionError("labels must be [n] uint8 matching images");
  hvc::data::ImageSet set;
  set.count = static_cast<std::size_t>(images.shape(0));
  set.pixels.assign(images.data(), images.data() + set.count * 784);
  set.labels.assign(labels.data(), labels.data() + set.count);
  return set;
}

hvc::ModelConfig make_config(const std::string& head,
                             const std::string& derivation, int branches,
                             const std::string& merge, int classes,
                             bool capsule_bn_per_class) {
  hvc::RunConfig probe;
  hvc::apply_config_kv(probe, "model.head", head);
  hvc::apply_config_kv(probe, "model.derivation", derivation);
  hvc::apply_config_kv(probe, "model.merge", merge);
  probe.model.branches = branches;
  probe.model.classes = classes;
  probe.model.capsule_bn_per_class = capsule_bn_per_class;
  probe.model.validate();
  return probe.model;
}

hvc::data::AugmentConfig strategy_config(const std::string& strategy) {
  hvc::RunConfig probe;
  hvc::apply_config_kv(probe, "augment.strategy", strategy);
  return probe.augment();
}

hvc::ensemble::TieBreak parse_tie(const std::string& tie) {
  if (tie == "lowest") return hvc::ensemble::TieBreak::kLowestClass;
  if (tie == "first") return hvc::ensemble::TieBreak::kFirstModel;
  throw hvc::ConfigError("tie must be 'lowest' or 'first'");
}

hvc::PredictionMatrix matrix_from(const U8Array& labels, const U8Array& rows,
                                  int classes) {
  if (rows.ndim() != 2) throw hvc::DimensionError("rows must be [k,n] uint8");
  if (labels.ndim() != 1 || labels.shape(0) != rows.shape(1))
    throw hvc::DimensionError("labels must be [n] uint8 matching rows");
  hvc::PredictionMatrix m;
  m.classes = static_cast<std::uint32_t>(classes);
  m.labels.assign(labels.data(), labels.data() + labels.shape(0));
  for (py::ssize_t r = 0; r < rows.shape(0); ++r) {
    const std::uint8_t* p = rows.data() + r * rows.shape(1);
    m.rows.emplace_back(p, p + rows.shape(1));
    m.names.push_back("model" + std::to_string(r));
  }
  m.validate();
  return m;
}

py::dict report_dict(const hvc::ensemble::SubsetCountReport& r) {
  py::dict d;
  d["family"] = r.family;
  d["tie_break"] = r.tie_break;
  d["models"] = r.model_count;
  d["samples"] = r.sample_count;
  d["subsets"] = r.subsets_enumerated;
  d["exact"] = r.exact;
  d["scale"] = r.scale;
  py::list thresholds, counts;
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    thresholds.append(r.thresholds[i] / 100.0);
    counts.append(r.counts[i]);
  }
  d["thresholds"] = thresholds;
  d["counts"] = counts;
  py::array_t<std::uint64_t> hist(
      {static_cast<py::ssize_t>(r.histogram.size())});
  std::memcpy(hist.mutable_data(), r.histogram.data(),
              r.histogram.size() * sizeof(std::uint64_t));
  d["histogram"] = hist;
  return d;
}

class PyModel {
 public:
  PyModel(const std::string& head, const std::string& derivation,
          int branches, const std::string& merge, int classes,
          bool capsule_bn_per_class, std::uint64_t seed)
      : model_(make_config(head, derivation, branches, merge, classes,
                           capsule_bn_per_class),
               seed) {}

  explicit PyModel(hvc::Model&& m) : model_(std::move(m)) {}

  py::array_t<float> forward(const F32Array& x) {
    F32Array arr = x;
    hvc::Tensor<float> input;
    if (arr.ndim() == 3) {
      hvc::Tensor<float> flat = tensor_from(arr);
      input = hvc::Tensor<float>(
          hvc::Shape{flat.dim(0), flat.dim(1), flat.dim(2), 1},
          std::vector<float>(flat.values().begin(), flat.values().end()));
    } else {
      input = tensor_from(arr);
    }
    auto out = model_.forward(nullptr, input, hvc::ops::BnMode::kEval);
    return array_from(out.logits);
  }

  py::list manifest() {
    py::list out;
    for (const auto& e : model_.manifest().entries) {
      py::dict d;
      d["name"] = e.name;
      d["role"] = e.role;
      d["shape"] = py::tuple(py::cast(e.shape));
      d["count"] = e.count;
      d["trainable"] = e.trainable;
      out.append(d);
    }
    return out;
  }

  std::vector<int> receptive_fields() { return model_.receptive_fields(); }
  std::vector<std::pair<std::size_t, std::size_t>> capsule_geometry() {
    return model_.capsule_geometry();
  }
  std::vector<int> tap_sides() { return model_.tap_sides(); }

  py::dict config() const {
    const auto& c = model_.config();
    py::dict d;
    d["head"] = c.head == hvc::HeadKind::kHvc ? "hvc" : "fc";
    d["derivation"] = c.derivation == hvc::CapsuleDerivation::kZ ? "z" : "xy";
    d["branches"] = c.branches;
    d["merge"] = c.merge == hvc::MergeKind::kNotLearnable ? "fixed"
                 : c.merge == hvc::MergeKind::kRandomInit ? "random"
                                                          : "ones";
    d["classes"] = c.classes;
    d["capsule_bn_per_class"] = c.capsule_bn_per_class;
    return d;
  }

  hvc::Model& raw() { return model_; }

 private:
  hvc::Model model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Branching/merging convolutional network with homogeneous vector "
      "capsules: native core";

  py::register_exception<hvc::DimensionError>(m, "DimensionError",
                                              PyExc_ValueError);
  py::register_exception<hvc::ConfigError>(m, "ConfigError",
                                           PyExc_ValueError);
  py::register_exception<hvc::DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<hvc::NumericError>(m, "NumericError",
                                            PyExc_ArithmeticError);

  m.def(
      "load_idx",
      [](const std::string& images, const std::string& labels) {
        auto set = hvc::data::load_idx(images, labels);
        py::array_t<std::uint8_t> px({static_cast<py::ssize_t>(set.count),
                                      py::ssize_t{28}, py::ssize_t{28}});
        std::memcpy(px.mutable_data(), set.pixels.data(), set.pixels.size());
        py::array_t<std::uint8_t> lb(
            {static_cast<py::ssize_t>(set.count)});
        std::memcpy(lb.mutable_data(), set.labels.data(), set.labels.size());
        return py::make_tuple(px, lb);
      },
      py::arg("images"), py::arg("labels"),
      "Load an IDX image/label pair -> (images [n,28,28] u8, labels [n] u8)");

  m.def(
      "margins",
      [](const U8Array& image) {
        auto im = image_from(image);
        auto mg = hvc::data::compute_margins(im);
        py::dict d;
        d["left"] = mg.left;
        d["right"] = mg.right;
        d["top"] = mg.top;
        d["bottom"] = mg.bottom;
        d["degenerate"] = mg.degenerate;
        return d;
      },
      py::arg("image"), "Empty margins flanking the ink on each side");

  m.def(
      "augment",
      [](const U8Array& image, std::uint64_t seed, std::uint64_t epoch,
         std::uint64_t index, const std::string& strategy) {
        auto cfg = strategy_config(strategy);
        return array_from_image(
            hvc::data::augment_pipeline(image_from(image), cfg, seed, epoch,
                                        index));
      },
      py::arg("image"), py::arg("seed"), py::arg("epoch") = 0,
      py::arg("index") = 0, py::arg("strategy") = "full",
      "Deterministic augmentation keyed by (seed, epoch, index)");

  m.def(
      "conv2d_valid",
      [](const F32Array& x, const F32Array& k) {
        return array_from(
            hvc::ops::conv2d_valid<float>(nullptr, tensor_from(x),
                                          tensor_from(k)));
      },
      py::arg("x"), py::arg("kernels"),
      "Valid 3x3 convolution, [N,H,W,Cin] x [3,3,Cin,Cout]");

  m.def("lr_at", &hvc::lr_at, py::arg("epoch"), py::arg("base") = 1e-3,
        py::arg("decay") = 0.98,
        "Exponentially decayed learning rate for an epoch");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, const std::string&, int,
                    const std::string&, int, bool, std::uint64_t>(),
           py::arg("head") = "hvc", py::arg("derivation") = "z",
           py::arg("branches") = 3, py::arg("merge") = "ones",
           py::arg("classes") = 10, py::arg("capsule_bn_per_class") = true,
           py::arg("seed") = 1)
      .def("forward", &PyModel::forward, py::arg("x"),
           "Eval-mode logits for [N,28,28] or [N,28,28,1] floats in [0,1]")
      .def("manifest", &PyModel::manifest)
      .def("receptive_fields", &PyModel::receptive_fields)
      .def("capsule_geometry", &PyModel::capsule_geometry)
      .def("tap_sides", &PyModel::tap_sides)
      .def("config", &PyModel::config);

  m.def(
      "evaluate_checkpoint",
      [](const std::string& path, const U8Array& images, const U8Array& labels,
         int batch, bool ema) {
        auto loaded = hvc::load_checkpoint(path);
        auto set = set_from(images, labels);
        hvc::EvalResult r;
        if (ema) {
          hvc::EmaScope scope(loaded.model, loaded.state);
          r = hvc::evaluate(loaded.model, set, batch);
        } else {
          r = hvc::evaluate(loaded.model, set, batch);
        }
        py::array_t<std::uint8_t> preds(
            {static_cast<py::ssize_t>(r.preds.size())});
        std::memcpy(preds.mutable_data(), r.preds.data(), r.preds.size());
        return py::make_tuple(r.accuracy, preds);
      },
      py::arg("path"), py::arg("images"), py::arg("labels"),
      py::arg("batch") = 250, py::arg("ema") = true,
      "Load a checkpoint and evaluate -> (accuracy, predictions)");

  m.def(
      "checkpoint_info",
      [](const std::string& path) {
        auto loaded = hvc::load_checkpoint(path);
        PyModel model(std::move(loaded.model));
        py::dict d;
        d["config"] = model.config();
        d["epoch"] = loaded.state.epoch;
        d["seed"] = loaded.state.seed;
        d["adam_step"] = loaded.state.adam.step;
        return d;
      },
      py::arg("path"), "Config and counters stored in a checkpoint");

  m.def(
      "read_prediction_matrix",
      [](const std::string& path) {
        auto mat = hvc::read_prediction_matrix(path);
        py::dict d;
        d["classes"] = mat.classes;
        py::array_t<std::uint8_t> labels(
            {static_cast<py::ssize_t>(mat.samples())});
        std::memcpy(labels.mutable_data(), mat.labels.data(),
                    mat.labels.size());
        d["labels"] = labels;
        py::array_t<std::uint8_t> rows(
            {static_cast<py::ssize_t>(mat.models()),
             static_cast<py::ssize_t>(mat.samples())});
        for (std::size_t r = 0; r < mat.models(); ++r)
          std::memcpy(rows.mutable_data() + r * mat.samples(),
                      mat.rows[r].data(), mat.samples());
        d["rows"] = rows;
        d["names"] = mat.names;
        return d;
      },
      py::arg("path"));

  m.def(
      "write_prediction_matrix",
      [](const std::string& path, const U8Array& labels, const U8Array& rows,
         const std::vector<std::string>& names, int classes) {
        auto m2 = matrix_from(labels, rows, classes);
        if (!names.empty()) {
          if (names.size() != m2.rows.size())
            throw hvc::DimensionError("names count must match row count");
          m2.names = names;
        }
        hvc::write_prediction_matrix(path, m2);
      },
      py::arg("path"), py::arg("labels"), py::arg("rows"),
      py::arg("names") = std::vector<std::string>{}, py::arg("classes") = 10);

  m.def(
      "majority_vote",
      [](const U8Array& labels, const U8Array& rows,
         const std::vector<int>& models, const std::string& tie) {
        auto mat = matrix_from(labels, rows, 10);
        auto preds = hvc::ensemble::majority_vote(mat, models, parse_tie(tie));
        py::array_t<std::uint8_t> out(
            {static_cast<py::ssize_t>(preds.size())});
        std::memcpy(out.mutable_data(), preds.data(), preds.size());
        return out;
      },
      py::arg("labels"), py::arg("rows"), py::arg("models"),
      py::arg("tie") = "lowest");

  m.def(
      "ensemble_accuracy",
      [](const U8Array& labels, const U8Array& rows,
         const std::vector<int>& models, const std::string& tie) {
        return hvc::ensemble::ensemble_accuracy(matrix_from(labels, rows, 10),
                                                models, parse_tie(tie));
      },
      py::arg("labels"), py::arg("rows"), py::arg("models"),
      py::arg("tie") = "lowest");

  m.def(
      "enumerate_subsets",
      [](const U8Array& labels, const U8Array& rows, const std::string& sizes,
         const std::vector<double>& thresholds, const std::string& tie,
         int threads) {
        auto mat = matrix_from(labels, rows, 10);
        auto family = hvc::ensemble::SubsetFamily::parse(sizes);
        std::vector<std::uint32_t> units;
        for (double t : thresholds)
          units.push_back(hvc::ensemble::accuracy_units(t));
        return report_dict(hvc::ensemble::enumerate_subsets(
            mat, family, units, parse_tie(tie), threads));
      },
      py::arg("labels"), py::arg("rows"), py::arg("sizes") = "ge2",
      py::arg("thresholds") = std::vector<double>{},
      py::arg("tie") = "lowest", py::arg("threads") = 0,
      "Exact subset-accuracy census over all subsets in the family");

  m.def(
      "troublesome",
      [](const U8Array& labels, const U8Array& rows) {
        auto r = hvc::ensemble::troublesome_digits(matrix_from(labels, rows, 10));
        py::dict d;
        d["models"] = r.model_count;
        d["samples"] = r.sample_count;
        d["full_agreement"] = r.full_agreement;
        auto items = [](const auto& v) {
          py::list out;
          for (const auto& it : v)
            out.append(py::make_tuple(it.index, it.label, it.correct_models));
          return out;
        };
        d["misclassified_by_all"] = items(r.misclassified_by_all);
        d["misclassified_by_majority"] = items(r.misclassified_by_majority);
        return d;
      },
      py::arg("labels"), py::arg("rows"));

  m.def(
      "train_from_config",
      [](const std::string& config_text, const std::string& resume) {
        hvc::RunConfig cfg;
        hvc::apply_config_text(cfg, config_text, "<config>");
        auto train_set = hvc::data::load_idx(cfg.train_images,
                                             cfg.train_labels);
        auto test_set = hvc::data::load_idx(cfg.test_images, cfg.test_labels);
        hvc::TrainResult res;
        {
          py::gil_scoped_release release;
          res = hvc::train(cfg, train_set, test_set, resume);
        }
        py::dict d;
        d["epochs_run"] = res.epochs_run;
        d["best_accuracy"] = res.best_accuracy;
        d["best_epoch"] = res.best_epoch;
        d["last_accuracy"] = res.last_accuracy;
        d["best_checkpoint"] = res.best_checkpoint;
        d["last_checkpoint"] = res.last_checkpoint;
        d["metrics"] = res.metrics_path;
        return d;
      },
      py::arg("config_text"), py::arg("resume") = "",
      "Run the full training loop from flat key = value config text");
}
