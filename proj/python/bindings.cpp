#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "imac/config.hpp"
#include "imac/dataset.hpp"
#include "imac/device.hpp"
#include "imac/error.hpp"
#include "imac/network.hpp"
#include "imac/perf.hpp"
#include "imac/pipeline.hpp"
#include "imac/training.hpp"

namespace py = pybind11;
using namespace imac;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using I8 = py::array_t<std::int8_t, py::array::c_style | py::array::forcecast>;

std::span<const double> view(const F64& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Split make_split(const F32& x, const U8& y) {
  if (x.ndim() != 2) throw InvalidInput("features must be a 2-D array (samples x features)");
  if (y.ndim() != 1 || y.shape(0) != x.shape(0)) throw DimensionMismatch("labels must have one entry per sample");
  Split s;
  s.shape = Shape{1, 1, static_cast<int>(x.shape(1))};
  s.count = static_cast<int>(x.shape(0));
  s.pixels.assign(x.data(), x.data() + x.size());
  s.labels.assign(y.data(), y.data() + y.size());
  s.validate();
  return s;
}

py::dict split_dict(const Split& s) {
  py::array_t<float> x({s.count, s.shape.size()});
  std::copy(s.pixels.begin(), s.pixels.end(), x.mutable_data());
  py::array_t<std::uint8_t> y(s.count);
  std::copy(s.labels.begin(), s.labels.end(), y.mutable_data());
  py::dict d;
  d["x"] = x;
  d["y"] = y;
  d["shape"] = py::make_tuple(s.shape.channels, s.shape.height, s.shape.width);
  return d;
}

Fidelity parse_fidelity(const std::string& s) {
  if (s == "ideal") return Fidelity::ideal;
  if (s == "circuit") return Fidelity::circuit;
  throw InvalidParameter("fidelity must be ideal or circuit");
}

InputEncoding parse_encoding(const std::string& s) {
  if (s == "unipolar") return InputEncoding::unipolar;
  if (s == "ternary") return InputEncoding::ternary;
  if (s == "analog") return InputEncoding::analog;
  throw InvalidParameter("input_encoding must be unipolar, ternary or analog");
}

py::dict calibration_dict(const Calibration& c) {
  py::dict d;
  d["speedup_gain"] = c.speedup_gain;
  d["energy_reduction"] = c.energy_reduction;
  d["fc_time_fraction"] = c.fc_time_fraction;
  d["fc_energy_fraction"] = c.fc_energy_fraction;
  d["amdahl_fraction"] = c.amdahl_fraction;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "SOT-MRAM in-memory analog co-processor simulator";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidParameter>(m, "InvalidParameter", error.ptr());
  py::register_exception<DimensionMismatch>(m, "DimensionMismatch", error.ptr());
  py::register_exception<InvalidInput>(m, "InvalidInput", error.ptr());
  py::register_exception<CapacityExceeded>(m, "CapacityExceeded", error.ptr());
  py::register_exception<StateError>(m, "StateError", error.ptr());
  py::register_exception<ProtocolViolation>(m, "ProtocolViolation", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<TrainingFailure>(m, "TrainingFailure", error.ptr());
  py::register_exception<InfeasibleTarget>(m, "InfeasibleTarget", error.ptr());

  // device
  py::class_<DeviceParams>(m, "DeviceParams")
      .def(py::init<>())
      .def_readwrite("ra_product", &DeviceParams::ra_product)
      .def_readwrite("tmr0", &DeviceParams::tmr0)
      .def_readwrite("v0", &DeviceParams::v0)
      .def_readwrite("mtj_length", &DeviceParams::mtj_length)
      .def_readwrite("mtj_width", &DeviceParams::mtj_width)
      .def("area_um2", &DeviceParams::area_um2)
      .def("validate", &DeviceParams::validate);
  m.def("base_resistance", &base_resistance, py::arg("params") = DeviceParams{});
  m.def(
      "tmr_at_bias", [](const DeviceParams& p, double vb) { return tmr_at_bias(p, BiasPoint{vb}); },
      py::arg("params") = DeviceParams{}, py::arg("v_b") = 0.0);
  m.def(
      "resistance",
      [](const std::string& state, double vb, const DeviceParams& p) {
        if (state != "P" && state != "AP") throw InvalidParameter("state must be P or AP");
        return resistance(p, DeviceState{state == "P" ? Orientation::P : Orientation::AP}, BiasPoint{vb});
      },
      py::arg("state"), py::arg("v_b") = 0.0, py::arg("params") = DeviceParams{});

  // parameters
  py::class_<TrainedParameters>(m, "Parameters")
      .def(py::init([](const std::vector<std::pair<I8, I8>>& layers, std::vector<double> scales) {
             TrainedParameters p;
             for (const auto& [w, b] : layers) {
               if (w.ndim() != 2 || b.ndim() != 1) throw InvalidInput("each layer is (2-D weights, 1-D biases)");
               BinarizedLayer l;
               l.weights = BinaryMatrix(static_cast<int>(w.shape(0)), static_cast<int>(w.shape(1)));
               std::copy(w.data(), w.data() + w.size(), l.weights.data.begin());
               l.biases.assign(b.data(), b.data() + b.size());
               p.layers.push_back(std::move(l));
             }
             p.scales = std::move(scales);
             p.validate();
             return p;
           }),
           py::arg("layers"), py::arg("scales") = std::vector<double>{})
      .def_property_readonly("dims", &TrainedParameters::dims)
      .def_readonly("scales", &TrainedParameters::scales)
      .def("weights",
           [](const TrainedParameters& p, int l) {
             const auto& w = p.layers.at(static_cast<std::size_t>(l)).weights;
             py::array_t<std::int8_t> out({w.rows, w.cols});
             std::copy(w.data.begin(), w.data.end(), out.mutable_data());
             return out;
           })
      .def("biases",
           [](const TrainedParameters& p, int l) {
             const auto& b = p.layers.at(static_cast<std::size_t>(l)).biases;
             py::array_t<std::int8_t> out(static_cast<py::ssize_t>(b.size()));
             std::copy(b.begin(), b.end(), out.mutable_data());
             return out;
           })
      .def("__eq__", [](const TrainedParameters& a, const TrainedParameters& b) { return a == b; });
  m.def("load_parameters", [](const std::string& path) {
    if (path.size() > 5 && path.ends_with(".ckpt")) return params_from_checkpoint(load_checkpoint(path));
    return load_parameters(path);
  });
  m.def("save_parameters", &save_parameters, py::arg("path"), py::arg("params"));
  m.def("student_forward", [](const TrainedParameters& p, const F64& x) { return to_array(student_forward(p, view(x))); });

  // network
  py::class_<ImacNetwork>(m, "Network")
      .def_static(
          "map",
          [](const TrainedParameters& p, const std::string& fidelity, const std::string& encoding, int capacity) {
            NetworkOptions o;
            o.fidelity = parse_fidelity(fidelity);
            o.input_encoding = parse_encoding(encoding);
            o.capacity = capacity;
            return ImacNetwork::map(p, o);
          },
          py::arg("params"), py::arg("fidelity") = "ideal", py::arg("input_encoding") = "unipolar",
          py::arg("capacity") = 4)
      .def(
          "forward",
          [](const ImacNetwork& n, const F64& x, const std::string& fidelity) {
            return to_array(n.forward(view(x), parse_fidelity(fidelity)));
          },
          py::arg("x"), py::arg("fidelity") = "ideal")
      .def("infer", [](const ImacNetwork& n, const F64& x) { return n.infer(view(x)).label; })
      .def_property_readonly("dims", [](const ImacNetwork& n) { return n.topology().layer_dims; })
      .def_property_readonly("subarrays_used", [](const ImacNetwork& n) { return n.topology().subarrays_used(); })
      .def_property_readonly("programming_cycles", &ImacNetwork::programming_cycles)
      .def("layer_gain", &ImacNetwork::layer_gain)
      .def("parameters", &ImacNetwork::parameters)
      .def("export_netlist", [](const ImacNetwork& n) { return export_netlist(n); });
  m.def("parse_netlist", [](const std::string& text) { return parse_netlist(text).build(); });
  m.def(
      "subarrays_needed",
      [](const std::vector<int>& dims, int capacity) { return plan_topology(dims, capacity).subarrays_used(); },
      py::arg("dims"), py::arg("capacity") = 1 << 20);

  // training
  m.def(
      "train_mlp",
      [](const F32& x, const U8& y, const std::vector<int>& dims, int epochs, int batch_size, double lr,
         double lr_decay, std::vector<double> activation_scales, std::uint64_t seed, std::optional<F32> x_test,
         std::optional<U8> y_test) {
        const Split train = make_split(x, y);
        std::optional<Split> test;
        if (x_test && y_test) test = make_split(*x_test, *y_test);
        MlpHyperParams hp;
        hp.epochs = epochs;
        hp.batch_size = batch_size;
        hp.learning_rate = lr;
        hp.lr_decay = lr_decay;
        hp.activation_scales = std::move(activation_scales);
        hp.seed = seed;
        MlpResult r;
        {
          py::gil_scoped_release release;
          r = train_mlp(train, test ? &*test : nullptr, dims, hp);
        }
        py::list history;
        for (const auto& row : r.history)
          history.append(py::dict(py::arg("step") = row.step, py::arg("epoch") = row.epoch,
                                  py::arg("loss") = row.loss, py::arg("train_accuracy") = row.train_accuracy,
                                  py::arg("test_accuracy") = row.test_accuracy));
        py::dict d;
        d["params"] = r.params;
        d["train_accuracy"] = r.train_accuracy;
        d["test_accuracy"] = r.test_accuracy;
        d["history"] = history;
        return d;
      },
      py::arg("x"), py::arg("y"), py::arg("dims"), py::arg("epochs") = 10, py::arg("batch_size") = 64,
      py::arg("lr") = 1e-3, py::arg("lr_decay") = 1.0, py::arg("activation_scales") = std::vector<double>{},
      py::arg("seed") = 1, py::arg("x_test") = py::none(), py::arg("y_test") = py::none());

  // datasets
  m.def("load_mnist", [](const std::string& dir) {
    const auto d = load_mnist(dir);
    return py::make_tuple(split_dict(d.train), split_dict(d.test));
  });
  m.def("load_cifar10", [](const std::string& dir) {
    const auto d = load_cifar10(dir);
    return py::make_tuple(split_dict(d.train), split_dict(d.test));
  });
  m.def("make_xor", [] { return split_dict(make_xor().train); });

  // converter and protocol
  m.def(
      "adc_quantize", [](double v, int bits) { return adc_quantize(v, AdcParams{bits}); }, py::arg("v"),
      py::arg("bits") = 3);
  m.def(
      "quantized_label",
      [](const F64& scores, std::optional<int> bits) {
        return quantized_label(view(scores), bits ? std::optional<AdcParams>(AdcParams{*bits}) : std::nullopt);
      },
      py::arg("scores"), py::arg("bits") = 3);
  py::class_<TransferProtocolState>(m, "Protocol")
      .def(py::init<long long>(), py::arg("timer_cycles") = 0)
      .def("store", &TransferProtocolState::store_imac, py::arg("address"), py::arg("value"))
      .def("load", &TransferProtocolState::load_imac, py::arg("address"))
      .def("read_inputs", &TransferProtocolState::read_inputs)
      .def("complete", [](TransferProtocolState& s, const std::vector<int>& codes) { s.complete(codes); })
      .def_property_readonly("ready", [](const TransferProtocolState& s) { return static_cast<int>(s.ready()); })
      .def_property_readonly("cycle", &TransferProtocolState::cycle)
      .def("trace",
           [](const TransferProtocolState& s) {
             py::list out;
             for (const auto& e : s.trace()) out.append(py::make_tuple(e.event, e.cycle, e.address, e.value));
             return out;
           })
      .def("trace_is_legal", [](const TransferProtocolState& s) { return trace_is_legal(s.trace()); });

  // performance
  m.def(
      "throughput",
      [](const std::vector<int>& dims, double settle) {
        const auto t = imac_throughput(plan_topology(dims, 1 << 20), settle);
        return py::make_tuple(t.latency_s, t.inferences_per_s);
      },
      py::arg("dims"), py::arg("settle_per_layer") = 5e-9);
  m.def(
      "calibrate",
      [](const std::string& model, double target_speedup, double target_energy, double imac_energy) {
        CostModel cost;
        cost.imac_energy_per_inference = imac_energy;
        return calibration_dict(calibrate(profile_from_cnn(resolve_model(model), cost, model), cost,
                                          CalibrationTarget{target_speedup, target_energy}));
      },
      py::arg("model"), py::arg("target_speedup"), py::arg("target_energy"), py::arg("imac_energy") = 97e-9);
  m.def(
      "speedup",
      [](const std::string& model) {
        const CostModel cost;
        return speedup(profile_from_cnn(resolve_model(model), cost, model));
      },
      py::arg("model"));
}
