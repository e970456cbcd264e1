#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "sfae/check_suite.hpp"
#include "sfae/enhancer_net.hpp"
#include "sfae/freq_decomp.hpp"
#include "sfae/pipeline.hpp"
#include "sfae/raw_io.hpp"
#include "sfae/train.hpp"

namespace py = pybind11;
using namespace sfae;
using ad::Tensor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  ad::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict to_dict(const net::NetParams& p) {
  py::dict d;
  for (const auto& [name, t] : p.named()) d[py::str(name)] = to_array(t);
  return d;
}

train::TrainConfig config_from_kwargs(const py::kwargs& kwargs) {
  KeyValues kv;
  for (const auto& [k, v] : kwargs) kv.set(py::str(k), py::str(v));
  return train::TrainConfig::from_kv(kv);
}

py::dict config_dict(const train::TrainConfig& c) {
  py::dict d;
  for (const auto& [k, v] : c.to_kv().entries()) d[py::str(k)] = v;
  return d;
}

net::NetConfig net_config(std::size_t n_bands, std::size_t height, std::size_t width, std::size_t in_channels,
                          std::size_t mha_heads) {
  net::NetConfig c;
  c.n_bands = n_bands;
  c.height = height;
  c.width = width;
  c.in_channels = in_channels;
  c.mha_heads = mha_heads;
  c.validate();
  return c;
}

py::dict eval_dict(const train::Evaluation& e) {
  py::dict d;
  d["l1"] = e.l1;
  d["raw_entropy"] = e.raw_entropy;
  d["enhanced_entropy"] = e.enhanced_entropy;
  d["raw_abs_skewness"] = e.raw_abs_skewness;
  d["enhanced_abs_skewness"] = e.enhanced_abs_skewness;
  d["gamma_abs_deviation"] = e.gamma_abs_deviation;
  return d;
}

class PyTrainer {
 public:
  explicit PyTrainer(train::Trainer t) : t_(std::move(t)) {}

  std::string run() {
    std::ostringstream log;
    {
      py::gil_scoped_release release;
      t_.run(&log);
    }
    return log.str();
  }
  double step() { return t_.step().loss; }
  std::size_t steps_done() const { return t_.steps_done(); }
  py::dict params() const { return to_dict(t_.params()); }
  py::dict config() const { return config_dict(t_.config()); }
  py::dict evaluate() const {
    return eval_dict(train::evaluate(t_.params(), t_.config().net_config(), t_.dataset()));
  }
  void save(const std::string& path) const { train::save_checkpoint(t_.checkpoint(), path); }

 private:
  train::Trainer t_;
};

}  // namespace

PYBIND11_MODULE(_sfae, m) {
  m.doc() = "Frequency-band gamma enhancement for RAW images";

  py::register_exception<ad::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<net::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<io::IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<train::CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<train::DivergenceError>(m, "DivergenceError", PyExc_FloatingPointError);

  m.def(
      "band_boundaries",
      [](std::size_t n, double f_max) {
        std::vector<std::pair<double, double>> out;
        for (const auto& b : freq::band_boundaries(n, f_max).bands) out.emplace_back(b.low, b.high);
        return out;
      },
      py::arg("n_bands"), py::arg("f_max") = freq::kDefaultFmax);

  m.def(
      "decompose",
      [](const Array& image, std::size_t n, double f_max) {
        const auto maps = freq::decompose(to_tensor(image), freq::band_boundaries(n, f_max));
        py::list out;
        for (const auto& t : maps.maps) out.append(to_array(t));
        return out;
      },
      py::arg("image"), py::arg("n_bands"), py::arg("f_max") = freq::kDefaultFmax,
      "Band maps of a B x C x H x W image, low to high frequency.");

  m.def(
      "band_energy",
      [](const Array& image, std::size_t n, double f_max) {
        return freq::band_energy(to_tensor(image), freq::band_boundaries(n, f_max));
      },
      py::arg("image"), py::arg("n_bands"), py::arg("f_max") = freq::kDefaultFmax);

  m.def(
      "safe_pow",
      [](const Array& s, const Array& gamma, double eps) {
        return to_array(pipeline::safe_pow(to_tensor(s), to_tensor(gamma), eps));
      },
      py::arg("s"), py::arg("gamma"), py::arg("eps") = pipeline::kSafePowEps);

  m.def(
      "init_params",
      [](std::size_t n_bands, std::size_t height, std::size_t width, std::uint64_t seed) {
        return to_dict(net::init_params(net_config(n_bands, height, width, 4, 4), seed));
      },
      py::arg("n_bands") = 8, py::arg("height") = 64, py::arg("width") = 64, py::arg("seed") = 42);

  m.def(
      "enhance",
      [](const Array& image, const std::string& checkpoint) {
        const Tensor img = to_tensor(image);
        net::NetParams params;
        net::NetConfig config;
        if (checkpoint.empty()) {
          config = net_config(8, 64, 64, img.rank() == 4 ? img.dim(1) : 4, 4);
          params = net::init_params(config, 42);
        } else {
          const train::Checkpoint ck = train::load_checkpoint(checkpoint);
          config = ck.config.net_config();
          params = train::params_from_checkpoint(ck);
        }
        ad::NoGradScope no_grad;
        const auto out = pipeline::enhance(img, params, config);
        py::dict d;
        d["enhanced"] = to_array(out.enhanced);
        d["enhanced_orig"] = to_array(out.enhanced_orig);
        d["enhanced_band_sum"] = to_array(out.enhanced_band_sum);
        d["gamma_orig"] = to_array(out.gammas.gamma_orig);
        d["gamma_freq"] = to_array(out.gammas.gamma_freq);
        return d;
      },
      py::arg("image"), py::arg("checkpoint") = "",
      "Enhances a B x 4 x H x W image; without a checkpoint the network is freshly initialized.");

  m.def(
      "synthesize",
      [](std::uint64_t seed, std::size_t width, std::size_t height, double exposure) {
        io::SynthOptions opt;
        opt.width = width;
        opt.height = height;
        opt.exposure_scale = exposure;
        const io::SyntheticRaw raw = io::synthesize_raw(seed, opt);
        py::dict d;
        d["packed"] = to_array(io::normalize_pack(raw.frame).tensor);
        d["scene"] = to_array(raw.scene);
        d["clean_linear"] = to_array(raw.clean_linear);
        return d;
      },
      py::arg("seed"), py::arg("width") = 128, py::arg("height") = 128, py::arg("exposure") = 0.05);

  m.def(
      "load_raw",
      [](const std::string& image, const std::string& meta) {
        return to_array(io::normalize_pack(io::load_raw(image, meta)).tensor);
      },
      py::arg("image"), py::arg("meta"), "Normalized, packed 1 x 4 x H/2 x W/2 tensor.");

  m.def(
      "image_entropy", [](const Array& image, std::size_t bins) { return io::image_entropy(to_tensor(image), bins); },
      py::arg("image"), py::arg("bins") = 256);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, std::size_t entries) {
        std::vector<std::tuple<std::string, bool, double>> out;
        for (const auto& r : check::gradcheck_suite({.seed = seed, .network_entries = entries}))
          out.emplace_back(r.name, r.passed, r.max_rel_error);
        return out;
      },
      py::arg("seed") = 42, py::arg("entries") = 12);

  py::class_<PyTrainer>(m, "Trainer")
      .def(py::init([](const py::kwargs& kw) { return PyTrainer(train::Trainer(config_from_kwargs(kw))); }),
           "Keyword arguments override the defaults of the training config.")
      .def_static("resume", [](const std::string& path) { return PyTrainer(train::Trainer::resume(train::load_checkpoint(path))); })
      .def("step", &PyTrainer::step, "One optimizer step; returns the loss.")
      .def("run", &PyTrainer::run, "Runs to the configured step count; returns the CSV log.")
      .def("evaluate", &PyTrainer::evaluate)
      .def("save", &PyTrainer::save)
      .def_property_readonly("steps_done", &PyTrainer::steps_done)
      .def_property_readonly("params", &PyTrainer::params)
      .def_property_readonly("config", &PyTrainer::config);
}
