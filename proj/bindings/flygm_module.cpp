#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "flygm/analysis.hpp"
#include "flygm/connectome.hpp"
#include "flygm/env.hpp"
#include "flygm/nullmodels.hpp"
#include "flygm/persistence.hpp"
#include "flygm/policy.hpp"
#include "flygm/training.hpp"

namespace py = pybind11;
using namespace flygm;

namespace {

std::vector<std::vector<double>> to_rows(const Tensor2<double>& m) {
  std::vector<std::vector<double>> out(size_t(m.rows));
  for (int r = 0; r < m.rows; ++r) {
    out[size_t(r)].resize(size_t(m.cols));
    for (int c = 0; c < m.cols; ++c) out[size_t(r)][size_t(c)] = m.at(r, c);
  }
  return out;
}

Tensor2<double> from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DataError("expected a non-empty matrix");
  Tensor2<double> m(int(rows.size()), int(rows[0].size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw DataError("ragged matrix");
    for (size_t c = 0; c < rows[r].size(); ++c) m.at(int(r), int(c)) = rows[r][c];
  }
  return m;
}

struct PyPolicy {
  std::unique_ptr<PolicyModel<double>> model;
  Connectome graph;  // kept for bookkeeping when graph-structured

  std::pair<std::vector<double>, std::vector<double>> act(const std::vector<double>& obs) {
    if (int(obs.size()) != model->obs_dim())
      throw UsageError("observation has width " + std::to_string(obs.size()) + ", expected " +
                       std::to_string(model->obs_dim()));
    ActionDist d = model->act(obs);
    return {d.mu, d.sigma};
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "graph-structured recurrent policies over signed synaptic operators";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);

  py::class_<Connectome>(m, "Graph")
      .def_property_readonly("n_neurons", [](const Connectome& c) { return c.size(); })
      .def_property_readonly("n_edges", [](const Connectome& c) { return int64_t(c.edges.size()); })
      .def_property_readonly("afferent", [](const Connectome& c) { return c.afferent; })
      .def_property_readonly("intrinsic", [](const Connectome& c) { return c.intrinsic; })
      .def_property_readonly("efferent", [](const Connectome& c) { return c.efferent; })
      .def("superclass_of",
           [](const Connectome& c, int i) { return c.neurons.at(size_t(i)).superclass; });

  m.def(
      "parse_graph",
      [](const std::string& neurons_csv, const std::string& edges_csv) {
        return parse_connectome(neurons_csv, edges_csv);
      },
      py::arg("neurons_csv"), py::arg("edges_csv"));

  m.def(
      "synth_graph",
      [](int afferent, int intrinsic, int efferent, int64_t edges, int blocks, double modularity,
         uint64_t seed) {
        SynthSpec spec;
        spec.n_afferent = afferent;
        spec.n_intrinsic = intrinsic;
        spec.n_efferent = efferent;
        spec.n_edges = edges;
        spec.n_blocks = blocks;
        spec.modularity = modularity;
        spec.seed = seed;
        return synth_connectome(spec);
      },
      py::arg("afferent") = 10, py::arg("intrinsic") = 80, py::arg("efferent") = 10,
      py::arg("edges") = 800, py::arg("blocks") = 4, py::arg("modularity") = 0.8,
      py::arg("seed") = 0);

  m.def(
      "signed_operator",
      [](const Connectome& c, bool unknown_excitatory) {
        CsrMatrix op = build_signed_operator(c, unknown_excitatory);
        py::dict out;
        out["shape"] = py::make_tuple(op.rows, op.cols);
        out["row_ptr"] = op.row_ptr;
        out["col_idx"] = op.col_idx;
        out["val"] = op.val;
        return out;
      },
      py::arg("graph"), py::arg("unknown_excitatory") = true);

  py::class_<PyPolicy>(m, "Policy")
      .def_property_readonly("obs_dim", [](const PyPolicy& p) { return p.model->obs_dim(); })
      .def_property_readonly("act_dim", [](const PyPolicy& p) { return p.model->act_dim(); })
      .def_property_readonly("kind", [](const PyPolicy& p) { return p.model->kind(); })
      .def("reset", [](PyPolicy& p) { p.model->reset_state(); })
      .def("act", &PyPolicy::act, py::arg("obs"))
      .def(
          "state",
          [](const PyPolicy& p) { return to_rows(p.model->state()); },
          "carried per-neuron state, rows are neurons")
      .def(
          "save",
          [](const PyPolicy& p, const std::string& path) { save_checkpoint(path, *p.model); },
          py::arg("path"))
      .def(
          "load",
          [](PyPolicy& p, const std::string& path) {
            load_policy_state(*p.model, load_tensors(path));
          },
          py::arg("path"));

  m.def(
      "graph_policy",
      [](const Connectome& graph, int obs_dim, int act_dim, int channels, int k_iters,
         uint64_t seed, bool unknown_excitatory) {
        auto p = std::make_unique<PyPolicy>();
        p->graph = graph;
        FlyGMConfig cfg;
        cfg.channels = channels;
        cfg.k_iters = k_iters;
        p->model = std::make_unique<FlyGMPolicy<double>>(
            graph, build_signed_operator(graph, unknown_excitatory), obs_dim, act_dim, cfg, seed);
        return p;
      },
      py::arg("graph"), py::arg("obs_dim"), py::arg("act_dim"), py::arg("channels") = 16,
      py::arg("k_iters") = 2, py::arg("seed") = 0, py::arg("unknown_excitatory") = true);

  m.def(
      "mlp_policy",
      [](int obs_dim, int act_dim, int hidden, uint64_t seed) {
        auto p = std::make_unique<PyPolicy>();
        MlpConfig cfg;
        cfg.hidden = hidden;
        p->model = std::make_unique<MlpPolicy<double>>(obs_dim, act_dim, cfg, seed);
        return p;
      },
      py::arg("obs_dim"), py::arg("act_dim"), py::arg("hidden") = 128, py::arg("seed") = 0);

  py::class_<StepResult>(m, "StepResult")
      .def_readonly("obs", &StepResult::obs)
      .def_readonly("reward", &StepResult::reward)
      .def_readonly("done", &StepResult::done)
      .def_readonly("failed", &StepResult::failed);

  py::class_<PointflyEnv>(m, "Env")
      .def(py::init([](const std::string& name, const std::vector<double>& command, double dt,
                       int episode_len, uint64_t seed) {
             return PointflyEnv(EnvDescriptor::make(name, command, dt, episode_len), EnvParams{},
                                seed);
           }),
           py::arg("name"), py::arg("command") = std::vector<double>{}, py::arg("dt") = 0.01,
           py::arg("episode_len") = 500, py::arg("seed") = 0)
      .def_property_readonly("obs_dim",
                             [](const PointflyEnv& e) { return e.descriptor().obs_dim; })
      .def_property_readonly("act_dim",
                             [](const PointflyEnv& e) { return e.descriptor().act_dim; })
      .def("reset", [](PointflyEnv& e) { return e.reset(); })
      .def("step", [](PointflyEnv& e, const std::vector<double>& a) { return e.step(a); },
           py::arg("action"))
      .def("expert_action", [](PointflyEnv& e, const std::vector<double>& obs) {
        return expert_controller(obs, e.descriptor()).mu;
      });

  m.def("kl_diag_gaussian", &kl_diag_gaussian, py::arg("mu_t"), py::arg("sigma_t"),
        py::arg("mu_s"), py::arg("sigma_s"),
        "KL(teacher || student) between diagonal Gaussians");

  m.def(
      "similarity_matrix",
      [](const std::vector<std::vector<double>>& series, double alpha) {
        SimilarityOptions opt;
        opt.alpha = alpha;
        return to_rows(similarity_matrix(from_rows(series), opt));
      },
      py::arg("series"), py::arg("alpha") = 0.7,
      "blended cosine and normalized-distance similarity over columns");

  m.def(
      "spectral_order",
      [](const std::vector<std::vector<double>>& sim) {
        SpectralOrder so = spectral_order(from_rows(sim));
        py::dict out;
        out["perm"] = so.perm;
        out["fiedler_value"] = so.fiedler_value;
        out["degenerate"] = so.degenerate;
        return out;
      },
      py::arg("similarity"), "second-eigenvector ordering of the similarity graph");

#ifdef FLYGM_GIT_DESCRIBE
  m.attr("__build__") = FLYGM_GIT_DESCRIBE;
#else
  m.attr("__build__") = "unknown";
#endif
  m.attr("__version__") = "0.1.0";
}
