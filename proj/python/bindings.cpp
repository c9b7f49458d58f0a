#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>

#include "coopmcts/datagen.hpp"
#include "coopmcts/error.hpp"
#include "coopmcts/experiment.hpp"
#include "coopmcts/features.hpp"
#include "coopmcts/gmm.hpp"
#include "coopmcts/mcts.hpp"
#include "coopmcts/mdn.hpp"
#include "coopmcts/scenario.hpp"

namespace py = pybind11;
using namespace coopmcts;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::list joint_list(const JointAction& a) {
  py::list out;
  for (const auto& x : a) out.append(py::make_tuple(x.dv, x.dy));
  return out;
}

py::dict factored_dict(const FactoredActionGmm& f) {
  py::dict d;
  d["lon"] = f.lon;
  d["lat"] = f.lat;
  return d;
}

template <typename T>
py::array_t<T> to_array(const std::vector<T>& v, std::vector<py::ssize_t> shape) {
  py::array_t<T> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict plan(const Scenario& sc, std::optional<int> iterations, std::optional<std::uint64_t> seed,
              const std::string& strategy, const MdnWeights* weights, const std::string& integration,
              bool selection) {
  SearchConfig cfg = sc.search;
  if (iterations) cfg.iterations = *iterations;
  if (seed) cfg.seed = *seed;
  cfg.strategy = parse_strategy(strategy);
  cfg.integration = parse_integration(integration);
  cfg.selection_bias = selection;
  if (weights) cfg.components = weights->metadata().components;
  SearchResult r;
  {
    py::gil_scoped_release release;
    r = search(sc.scene, cfg, weights);
  }
  py::list children;
  for (const auto& c : r.root_children) {
    py::dict d;
    d["action"] = joint_list(c.action);
    d["visits"] = c.visits;
    d["q"] = c.q;
    children.append(d);
  }
  py::dict out;
  out["selected_action"] = joint_list(r.best);
  out["root_children"] = children;
  out["root_visits"] = r.root_visits;
  out["iterations"] = r.iterations;
  out["seed"] = cfg.seed;
  out["wall_time_ms"] = r.wall_time_ms;
  return out;
}

py::dict record_dict(const DatasetRecord& r) {
  py::dict d;
  d["id"] = r.id;
  d["scenario"] = r.scenario;
  d["run"] = r.run;
  d["timestep"] = r.timestep;
  d["ego"] = r.ego;
  d["action_class"] = to_string(r.action_class);
  d["failed"] = r.failed;
  d["scalars"] = to_array(r.scalars.values, {static_cast<py::ssize_t>(r.scalars.values.size())});
  d["mask"] = r.scalars.mask;
  d["slot_agent"] = r.scalars.slot_agent;
  py::list samples;
  for (const auto& s : r.samples) {
    py::dict sd;
    sd["slot"] = s.slot;
    sd["lon"] = py::make_tuple(s.lon.values, s.lon.weights);
    sd["lat"] = py::make_tuple(s.lat.values, s.lat.weights);
    samples.append(sd);
  }
  d["samples"] = samples;
  py::list labels;
  for (const auto& l : r.labels) {
    py::dict ld;
    ld["slot"] = l.slot;
    ld["k2"] = factored_dict(l.k2);
    ld["k3"] = factored_dict(l.k3);
    labels.append(ld);
  }
  d["labels"] = labels;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cooperative MCTS planner with learned mixture priors";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", base.ptr());
  py::register_exception<RandomizationError>(m, "RandomizationError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<TruncationError>(m, "TruncationError", base.ptr());
  py::register_exception<ChecksumError>(m, "ChecksumError", base.ptr());
  py::register_exception<VersionError>(m, "VersionError", base.ptr());
  py::register_exception<OffsetError>(m, "OffsetError", base.ptr());

  py::class_<Gmm1D>(m, "Gmm1D")
      .def(py::init([](std::vector<double> phi, std::vector<double> mu, std::vector<double> var) {
             Gmm1D g{std::move(phi), std::move(mu), std::move(var)};
             g.validate();
             return g;
           }),
           py::arg("phi"), py::arg("mu"), py::arg("var"))
      .def_readonly("phi", &Gmm1D::phi)
      .def_readonly("mu", &Gmm1D::mu)
      .def_readonly("var", &Gmm1D::var)
      .def_property_readonly("k", &Gmm1D::k)
      .def("pdf", [](const Gmm1D& g, double x) { return pdf(g, x); })
      .def("log_likelihood",
           [](const Gmm1D& g, const std::vector<double>& values, std::optional<std::vector<double>> weights) {
             const auto w = weights.value_or(std::vector<double>(values.size(), 1.0));
             if (w.size() != values.size()) throw ConfigError("values and weights differ in length");
             double ll = 0.0;
             for (std::size_t i = 0; i < values.size(); ++i) ll += w[i] * std::log(pdf(g, values[i]));
             return ll;
           },
           py::arg("values"), py::arg("weights") = py::none())
      .def("__eq__", [](const Gmm1D& a, const Gmm1D& b) { return a == b; })
      .def("__repr__", [](const Gmm1D& g) { return "Gmm1D(" + gmm_to_json(g) + ")"; });

  m.def("nnelu", &nnelu, py::arg("x"));
  m.def(
      "fit_em",
      [](const std::vector<double>& values, int k, std::optional<std::vector<double>> weights, std::uint64_t seed,
         int max_iter, double tol) {
        EmOptions opts;
        opts.seed = seed;
        opts.max_iter = max_iter;
        opts.tol = tol;
        return fit_em({values, weights.value_or(std::vector<double>(values.size(), 1.0))}, k, opts);
      },
      py::arg("values"), py::arg("k"), py::arg("weights") = py::none(), py::arg("seed") = 0,
      py::arg("max_iter") = 200, py::arg("tol") = 1e-8);

  py::class_<Scenario>(m, "Scenario")
      .def_static("load", &load_scenario, py::arg("path"))
      .def_static("from_json", &parse_scenario, py::arg("text"))
      .def("to_json", &serialize_scenario)
      .def("save", [](const Scenario& s, const std::filesystem::path& p) { save_scenario(p, s); })
      .def_readwrite("name", &Scenario::name)
      .def_property_readonly("num_agents", [](const Scenario& s) { return s.scene.agents.size(); })
      .def_property(
          "iterations", [](const Scenario& s) { return s.search.iterations; },
          [](Scenario& s, int n) { s.search.iterations = n; })
      .def("agents",
           [](const Scenario& s) {
             py::list out;
             for (const auto& a : s.scene.agents) {
               py::dict d;
               d["x"] = a.x;
               d["y"] = a.y;
               d["heading"] = a.heading;
               d["v"] = a.v;
               d["a"] = a.a;
               d["length"] = a.length;
               d["width"] = a.width;
               d["v_desired"] = a.v_desired;
               d["lane_desired"] = a.lane_desired;
               out.append(d);
             }
             return out;
           })
      .def(
          "randomized",
          [](const Scenario& s, std::uint64_t seed) {
            Scenario out = s;
            out.scene = randomize_scenario(s.scene, seed, s.randomization);
            return out;
          },
          py::arg("seed"));

  py::class_<MdnWeights>(m, "MdnWeights")
      .def_static(
          "random",
          [](int components, std::uint64_t seed, int grid_rows, int grid_cols) {
            MdnMetadata meta;
            meta.components = components;
            meta.features.grid_rows = grid_rows;
            meta.features.grid_cols = grid_cols;
            return MdnWeights::random(meta, seed);
          },
          py::arg("components") = 2, py::arg("seed") = 0, py::arg("grid_rows") = 256, py::arg("grid_cols") = 128)
      .def_static("load", &load_weights, py::arg("path"))
      .def("save", [](const MdnWeights& w, const std::filesystem::path& p) { save_weights(p, w); })
      .def("to_bytes",
           [](const MdnWeights& w) {
             const auto bytes = encode_weights(w);
             return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
           })
      .def_static("from_bytes",
                  [](const py::bytes& b) {
                    const std::string s = b;
                    return decode_weights({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
                  })
      .def_property_readonly("components", [](const MdnWeights& w) { return w.metadata().components; })
      .def_property_readonly("grid_shape",
                             [](const MdnWeights& w) {
                               return py::make_tuple(w.metadata().features.grid_rows, w.metadata().features.grid_cols);
                             })
      .def("tensor_names",
           [](const MdnWeights& w) {
             std::vector<std::string> names;
             for (const auto& t : w.tensors()) names.push_back(t.name);
             return names;
           })
      .def("tensor",
           [](const MdnWeights& w, const std::string& name) {
             const Tensor& t = w.tensor(name);
             return to_array(t.data, std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
           })
      .def(
          "predict",
          [](const MdnWeights& w, const Scenario& sc, int ego) {
            const std::vector<Scene> h{sc.scene};
            MdnPrediction p;
            {
              py::gil_scoped_release release;
              p = predict_policy(w, h, ego);
            }
            py::list out;
            for (std::size_t i = 0; i < p.slots.size(); ++i) {
              if (!p.valid[i]) continue;
              py::dict d = factored_dict(p.slots[i]);
              d["slot"] = i;
              d["agent"] = p.slot_agent[i];
              out.append(d);
            }
            return out;
          },
          py::arg("scenario"), py::arg("ego") = 0)
      .def("__eq__", [](const MdnWeights& a, const MdnWeights& b) { return a == b; });

  m.def(
      "features",
      [](const Scenario& sc, int ego, int grid_rows, int grid_cols) {
        FeatureConfig cfg;
        cfg.grid_rows = grid_rows;
        cfg.grid_cols = grid_cols;
        const std::vector<Scene> h{sc.scene};
        const FeatureTensor f = build_features(h, ego, cfg);
        py::dict d;
        d["grid"] = to_array(f.grid, {2, f.rows, f.cols});
        d["scalars"] = to_array(f.scalars.values, {cfg.slots, cfg.history, 7});
        d["mask"] = f.scalars.mask;
        d["slot_agent"] = f.scalars.slot_agent;
        return d;
      },
      py::arg("scenario"), py::arg("ego") = 0, py::arg("grid_rows") = 256, py::arg("grid_cols") = 128);

  m.def(
      "conv2d_reflect",
      [](FloatArray input, FloatArray kernel, std::optional<FloatArray> bias, int stride, int pad) {
        if (input.ndim() != 3 || kernel.ndim() != 4 || kernel.shape(1) != input.shape(0) ||
            kernel.shape(2) != kernel.shape(3))
          throw ShapeError("expected input [C,H,W] and kernel [O,C,k,k]");
        PlaneStack in{static_cast<int>(input.shape(0)), static_cast<int>(input.shape(1)),
                      static_cast<int>(input.shape(2)), {input.data(), input.data() + input.size()}};
        const int out_c = static_cast<int>(kernel.shape(0));
        std::vector<float> b;
        if (bias) b.assign(bias->data(), bias->data() + bias->size());
        const PlaneStack out = conv2d_reflect(in, {kernel.data(), static_cast<std::size_t>(kernel.size())}, b, out_c,
                                              static_cast<int>(kernel.shape(2)), stride, pad);
        return to_array(out.data, {out.channels, out.rows, out.cols});
      },
      py::arg("input"), py::arg("kernel"), py::arg("bias") = py::none(), py::arg("stride") = 1, py::arg("pad") = 0);

  m.def(
      "plan",
      [](const Scenario& sc, std::optional<int> iterations, std::optional<std::uint64_t> seed,
         const std::string& strategy, const MdnWeights* weights, const std::string& integration, bool selection) {
        return plan(sc, iterations, seed, strategy, weights, integration, selection);
      },
      py::arg("scenario"), py::arg("iterations") = py::none(), py::arg("seed") = py::none(),
      py::arg("strategy") = "baseline", py::arg("weights") = nullptr, py::arg("integration") = "root",
      py::arg("selection") = false);

  m.def("classify_action", [](double dv, double dy) { return to_string(classify_action({dv, dy})); },
        py::arg("dv"), py::arg("dy"));

  m.def(
      "generate_dataset",
      [](const std::vector<std::filesystem::path>& scenarios, int runs, std::uint64_t seed,
         const std::filesystem::path& out, std::optional<int> iterations, bool balance) {
        DatagenConfig cfg;
        cfg.iterations = iterations;
        Dataset ds;
        ds.features = cfg.features;
        int failed = 0;
        {
          py::gil_scoped_release release;
          for (std::size_t s = 0; s < scenarios.size(); ++s) {
            const Scenario sc = load_scenario(scenarios[s]);
            for (int run = 0; run < runs; ++run) {
              RunResult rr = generate_run(sc, seed + s * 1000003u + static_cast<std::uint64_t>(run), cfg, run,
                                          ds.records.size());
              failed += rr.failed ? 1 : 0;
              for (auto& rec : rr.records) ds.records.push_back(std::move(rec));
            }
          }
          if (balance) ds.records = balance_classes(ds.records);
          write_dataset(ds, out);
        }
        py::dict d;
        d["records"] = ds.records.size();
        d["failed_runs"] = failed;
        return d;
      },
      py::arg("scenarios"), py::arg("runs"), py::arg("seed"), py::arg("out"), py::arg("iterations") = py::none(),
      py::arg("balance") = false);

  m.def(
      "read_dataset",
      [](const std::filesystem::path& dir, bool with_grids) {
        const Dataset ds = read_dataset(dir);
        py::list out;
        for (const auto& r : ds.records) {
          py::dict d = record_dict(r);
          if (with_grids)
            d["grid"] = to_array(r.grid, {2, ds.features.grid_rows, ds.features.grid_cols});
          out.append(d);
        }
        return out;
      },
      py::arg("dir"), py::arg("with_grids") = false);

  m.def(
      "fit_dataset_labels",
      [](const std::filesystem::path& dir, std::optional<std::filesystem::path> out) {
        Dataset ds = read_dataset(dir);
        std::vector<DatasetRecord> kept;
        std::vector<std::string> dropped;
        {
          py::gil_scoped_release release;
          for (const auto& r : ds.records) {
            std::string reason;
            if (auto labelled = fit_labels(r, &reason))
              kept.push_back(std::move(*labelled));
            else
              dropped.push_back(reason);
          }
          ds.records = std::move(kept);
          write_dataset(ds, out.value_or(dir));
        }
        return py::make_tuple(ds.records.size(), dropped);
      },
      py::arg("dir"), py::arg("out") = py::none());

  m.def(
      "evaluate",
      [](const std::filesystem::path& spec_path, std::optional<std::filesystem::path> out, int threads) {
        const ExperimentSpec spec = load_experiment_spec(spec_path);
        SuccessTable table;
        {
          py::gil_scoped_release release;
          table = run_experiment(spec, threads);
          if (out) report(table, *out);
        }
        return py::make_tuple(table_csv(table), table.warnings);
      },
      py::arg("spec"), py::arg("out") = py::none(), py::arg("threads") = 0);
}
