#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rnc/bleu.hpp"
#include "rnc/cascade.hpp"
#include "rnc/config.hpp"
#include "rnc/dataset.hpp"
#include "rnc/decoder.hpp"
#include "rnc/errors.hpp"
#include "rnc/kmeans.hpp"
#include "rnc/pipeline.hpp"
#include "rnc/projection.hpp"

namespace py = pybind11;
using namespace rnc;

namespace {

RunConfig config_from(const std::string& text) {
  return text.empty() ? RunConfig{} : RunConfig::from_json(nlohmann::json::parse(text));
}

std::vector<double> tensor_values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor row_tensor(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ShapeError("empty matrix");
  std::vector<double> flat;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw ShapeError("ragged matrix");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor::from({rows.size(), rows.front().size()}, std::move(flat));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Image annotation cascade core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<MissingArtifactError>(m, "MissingArtifactError", PyExc_FileNotFoundError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_RuntimeError);

  m.def("version", &build_version);

  // text
  m.def("split_terms", [](const std::string& a) { return split_terms(a); });
  m.def("tokenize", [](const std::string& a) { return tokenize(a); });
  m.def("disease_key", &disease_key);
  m.def(
      "term_stats_tsv",
      [](const std::vector<std::string>& annotations) {
        Corpus corpus;
        for (std::size_t i = 0; i < annotations.size(); ++i) {
          corpus.push_back(make_example("a" + std::to_string(i), Image(1, 1), annotations[i]));
        }
        return term_stats_tsv(term_stats(corpus));
      },
      "Term totals/overlaps TSV of a list of annotation strings.");

  // BLEU
  m.def("bleu_n", &bleu_n, py::arg("candidate"), py::arg("reference"), py::arg("n"));
  m.def("modified_precision", &modified_precision, py::arg("candidate"), py::arg("reference"), py::arg("n"));
  m.def(
      "bleu_corpus",
      [](const std::vector<std::pair<Tokens, Tokens>>& pairs, bool include_seed) {
        std::vector<Prediction> preds;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          preds.push_back({std::to_string(i), Split::test, "", pairs[i].first, pairs[i].second});
        }
        const auto r = bleu_corpus(preds, Split::test, {include_seed});
        return std::make_pair(std::vector<double>(r.score.begin(), r.score.end()),
                              std::vector<std::size_t>(r.count.begin(), r.count.end()));
      },
      py::arg("pairs"), py::arg("include_seed") = true,
      "(candidate, reference) pairs -> (BLEU-1..4 scores x100, contributing counts).");

  // cells
  m.def(
      "lstm_step",
      [](const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& h,
         const std::vector<std::vector<double>>& mem, const std::vector<std::vector<std::vector<double>>>& W,
         const std::vector<std::vector<std::vector<double>>>& U, const std::vector<std::vector<double>>& b) {
        if (W.size() != 4 || U.size() != 4 || b.size() != 4) throw ShapeError("lstm_step needs 4 gates (i, f, o, h)");
        auto vec = [](const std::vector<double>& v) { return Tensor::from({v.size()}, v); };
        LstmParams p{row_tensor(W[0]), row_tensor(U[0]), vec(b[0]), row_tensor(W[1]), row_tensor(U[1]), vec(b[1]),
                     row_tensor(W[2]), row_tensor(U[2]), vec(b[2]), row_tensor(W[3]), row_tensor(U[3]), vec(b[3])};
        NoGradGuard guard;
        auto s = lstm_step(p, row_tensor(x), row_tensor(h), row_tensor(mem));
        return std::make_pair(tensor_values(s.h), tensor_values(s.m));
      },
      "One LSTM step; returns flattened (h, m).");
  m.def(
      "gru_step",
      [](const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& h,
         const std::vector<std::vector<std::vector<double>>>& W, const std::vector<std::vector<std::vector<double>>>& U,
         const std::vector<std::vector<double>>& b) {
        if (W.size() != 3 || U.size() != 3 || b.size() != 3) throw ShapeError("gru_step needs 3 gates (z, r, h)");
        auto vec = [](const std::vector<double>& v) { return Tensor::from({v.size()}, v); };
        GruParams p{row_tensor(W[0]), row_tensor(U[0]), vec(b[0]), row_tensor(W[1]), row_tensor(U[1]), vec(b[1]),
                    row_tensor(W[2]), row_tensor(U[2]), vec(b[2])};
        NoGradGuard guard;
        return tensor_values(gru_step(p, row_tensor(x), row_tensor(h)).h);
      },
      "One GRU step; returns flattened h.");

  // clustering and projection
  m.def(
      "kmeans",
      [](const std::vector<Point>& points, int k, std::uint64_t seed, int max_iter) {
        auto r = kmeans(points, k, seed, max_iter);
        return py::make_tuple(r.centroids, r.assignment, r.objective, r.converged);
      },
      py::arg("points"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iter") = 100,
      "-> (centroids, assignment, objective per step, converged)");
  m.def("cluster_threshold", &cluster_threshold);
  m.def("cluster_count", &cluster_count, py::arg("n"), py::arg("target") = 50.0);
  m.def("pca_2d", [](const std::vector<Point>& x) {
    const auto p = pca_2d(x);
    std::vector<std::pair<double, double>> out;
    for (const auto& c : p.coords) out.emplace_back(c[0], c[1]);
    return out;
  });

  // configuration and pipeline
  m.def("default_config", [] { return RunConfig{}.to_json().dump(); }, "Default config as a JSON string.");
  m.def("config_hash", [](const std::string& text) { return config_from(text).hash(); });

  py::class_<Pipeline>(m, "Pipeline")
      .def(py::init([](const std::filesystem::path& out, const std::string& config, bool force) {
             return std::make_unique<Pipeline>(config_from(config), out, force);
           }),
           py::arg("out"), py::arg("config") = "", py::arg("force") = false)
      .def("synth", &Pipeline::synth)
      .def("ingest", [](Pipeline& p, const std::filesystem::path& src) { p.ingest(src); })
      .def("stats", &Pipeline::stats)
      .def("split", &Pipeline::split)
      .def("mine", &Pipeline::mine)
      .def("train_cnn", &Pipeline::train_cnn, py::arg("iteration") = 0)
      .def("train_rnn", &Pipeline::train_rnn, py::arg("iteration") = 0)
      .def("generate", &Pipeline::generate, py::arg("iteration") = 0)
      .def("eval", &Pipeline::eval, py::arg("iteration") = 0)
      .def("context", &Pipeline::context)
      .def("cluster", &Pipeline::cluster)
      .def("iterate", &Pipeline::iterate)
      .def("project", &Pipeline::project, py::arg("iteration") = 0)
      .def("manifest", [](const Pipeline& p) { return p.manifest().dump(); })
      .def_property_readonly("executed", &Pipeline::executed);
}
