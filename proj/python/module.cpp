#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "ssrem/common.hpp"
#include "ssrem/experiments.hpp"
#include "ssrem/model.hpp"
#include "ssrem/refmetrics.hpp"
#include "ssrem/stats.hpp"
#include "ssrem/transport.hpp"

namespace py = pybind11;
using namespace ssrem;

namespace {

// Corpora cross the boundary as [{"conversation_id": str, "turns": [{"speaker": str, "text": str}]}].
Corpus to_corpus(const py::list& items) {
  Corpus out;
  for (const auto& item : items) {
    const auto d = item.cast<py::dict>();
    Conversation conv;
    conv.id = d["conversation_id"].cast<std::string>();
    for (const auto& t : d["turns"].cast<py::list>()) {
      const auto turn = t.cast<py::dict>();
      conv.turns.push_back({turn["speaker"].cast<std::string>(), turn["text"].cast<std::string>()});
    }
    out.push_back(std::move(conv));
  }
  return out;
}

py::list from_corpus(const Corpus& corpus) {
  py::list out;
  for (const auto& conv : corpus) {
    py::list turns;
    for (const auto& t : conv.turns) turns.append(py::dict(py::arg("speaker") = t.speaker, py::arg("text") = t.text));
    out.append(py::dict(py::arg("conversation_id") = conv.id, py::arg("turns") = turns));
  }
  return out;
}

py::tuple correlation(const CorrelationResult& r) { return py::make_tuple(r.coefficient, r.p_value); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of the speaker-sensitive response evaluator";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<StatisticError>(m, "StatisticError", PyExc_ValueError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def("tokenize", &tokenize, py::arg("text"));

  py::class_<EmbeddingTable>(m, "EmbeddingTable")
      .def(py::init<std::size_t>(), py::arg("dim"))
      .def_static("load", [](const std::string& path) { return EmbeddingTable::load(path); }, py::arg("path"))
      .def("add", [](EmbeddingTable& t, std::string token, const std::vector<double>& v) {
        if (v.size() != t.dim()) throw UsageError("vector length differs from the table dimension");
        return t.add(std::move(token), v);
      })
      .def("save", [](const EmbeddingTable& t, const std::string& path) { t.save(path); })
      .def("vector", [](const EmbeddingTable& t, const std::string& token) -> std::optional<std::vector<double>> {
        const double* p = t.find(token);
        if (!p) return std::nullopt;
        return std::vector<double>(p, p + t.dim());
      })
      .def("__contains__", [](const EmbeddingTable& t, const std::string& token) { return t.find(token) != nullptr; })
      .def("__len__", &EmbeddingTable::size)
      .def_property_readonly("dim", &EmbeddingTable::dim)
      .def("sha256", &EmbeddingTable::sha256);

  m.def("bleu", [](const std::vector<std::string>& ref, const std::vector<std::string>& cand, std::size_t max_n,
                   bool legacy) {
        BleuOptions o;
        o.max_n = max_n;
        o.smoothing = legacy ? BleuSmoothing::kNltkLegacy7 : BleuSmoothing::kChenCherry7;
        return bleu(ref, cand, o).value;
      },
        py::arg("reference"), py::arg("candidate"), py::arg("max_n") = 4, py::arg("legacy") = false);
  m.def("rouge_l", [](const std::vector<std::string>& ref, const std::vector<std::string>& cand, double beta) {
        return rouge_l(ref, cand, beta).value;
      },
        py::arg("reference"), py::arg("candidate"), py::arg("beta") = 1.0);
  m.def("emb_average", [](const EmbeddingTable& t, const std::vector<std::string>& ref,
                          const std::vector<std::string>& cand) { return emb_average(t, ref, cand).value; },
        py::arg("table"), py::arg("reference"), py::arg("candidate"));
  m.def("mover_distance", [](const std::vector<std::string>& ref, const std::vector<std::string>& cand,
                             const EmbeddingTable& t, const std::string& variant) {
        return mover_distance(ref, cand, t, parse_mover_variant(variant));
      },
        py::arg("reference"), py::arg("candidate"), py::arg("table"), py::arg("variant") = "s_wms");
  m.def("mover_similarity", [](const std::vector<std::string>& ref, const std::vector<std::string>& cand,
                               const EmbeddingTable& t, const std::string& variant) {
        return mover_similarity(ref, cand, t, parse_mover_variant(variant)).value;
      },
        py::arg("reference"), py::arg("candidate"), py::arg("table"), py::arg("variant") = "s_wms");
  m.def("solve_transport", [](const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& cost) {
        const auto plan = solve_transport(a, b, cost);
        return py::make_tuple(plan.cost, plan.flow);
      },
        py::arg("supply"), py::arg("demand"), py::arg("cost"));

  m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return correlation(pearson(x, y)); });
  m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return correlation(spearman(x, y)); });
  m.def("permutation_p_value", [](const std::vector<double>& x, const std::vector<double>& y, std::size_t shuffles,
                                  std::uint64_t seed) { return permutation_p_value(x, y, shuffles, seed); },
        py::arg("x"), py::arg("y"), py::arg("shuffles") = 10000, py::arg("seed") = 0);
  m.def("t_two_sided_p", &t_two_sided_p, py::arg("t"), py::arg("df"));
  m.def("fleiss_kappa", &fleiss_kappa, py::arg("ratings"));
  m.def("mean_ci", [](const std::vector<double>& v, double level) {
        const auto ci = mean_ci(v, level);
        return py::make_tuple(ci.mean, ci.half_width);
      },
        py::arg("values"), py::arg("level") = 0.95);
  m.def("linear_fit", [](const std::vector<double>& x, const std::vector<double>& y) {
    const auto f = linear_fit(x, y);
    return py::make_tuple(f.slope, f.intercept);
  });

  m.def("f_score", &f_score, py::arg("M"), py::arg("context"), py::arg("response"));
  m.def("candidate_probability", &candidate_probability, py::arg("M"), py::arg("context"), py::arg("candidates"));
  m.def("loss_and_gradient", [](const Eigen::MatrixXd& M, const Eigen::VectorXd& context,
                                const Eigen::MatrixXd& candidates, std::size_t gt, const std::string& loss,
                                double margin) {
        if (gt >= static_cast<std::size_t>(candidates.rows())) throw UsageError("gt index out of range");
        const std::vector<TrainingExample> batch{{context, candidates, gt}};
        LossType type = LossType::kSoftmax;
        if (loss == "margin") type = LossType::kMargin;
        else if (loss != "softmax") throw UsageError("loss must be softmax or margin");
        const auto r = loss_and_gradient(M, batch, type, margin);
        return py::make_tuple(r.loss, r.gradient);
      },
        py::arg("M"), py::arg("context"), py::arg("candidates"), py::arg("gt") = 0, py::arg("loss") = "softmax",
        py::arg("margin") = 0.5);

  py::class_<ModelParams>(m, "ModelParams")
      .def_readonly("M", &ModelParams::M)
      .def_property_readonly("f_bounds", [](const ModelParams& p) -> std::optional<std::pair<double, double>> {
        if (!p.f_bounds) return std::nullopt;
        return std::pair{p.f_bounds->lower, p.f_bounds->upper};
      })
      .def_property_readonly("g_bounds", [](const ModelParams& p) -> std::optional<std::pair<double, double>> {
        if (!p.g_bounds) return std::nullopt;
        return std::pair{p.g_bounds->lower, p.g_bounds->upper};
      })
      .def_property_readonly("config", [](const ModelParams& p) { return to_json(p.config).dump(); })
      .def("save", [](const ModelParams& p, const std::string& path) { save_params(p, path); })
      .def("to_string", &params_to_string)
      .def_static("load", [](const std::string& path) { return load_params(path); })
      .def_static("from_string", [](const std::string& text) { return params_from_string(text); });

  py::class_<Scorer>(m, "Scorer")
      .def(py::init<const EmbeddingTable&, ModelParams>(), py::keep_alive<1, 2>())
      .def("unreferenced", [](const Scorer& s, const std::vector<std::string>& context, const std::string& response) {
        std::vector<std::vector<std::string>> turns;
        for (const auto& t : context) turns.push_back(tokenize(t));
        return s.unreferenced(turns, tokenize(response));
      })
      .def("score", [](const Scorer& s, const std::vector<std::string>& context, const std::string& reference,
                       const std::string& response) {
        std::vector<std::vector<std::string>> turns;
        for (const auto& t : context) turns.push_back(tokenize(t));
        return s.score(turns, tokenize(reference), tokenize(response));
      });

  m.def("synth_corpus", [](const std::string& spec_json) {
    const auto spec = apply_json(SynthSpec{}, nlohmann::json::parse(spec_json));
    auto r = synth_corpus(spec);
    py::list responses;
    for (const auto& p : r.responses) {
      responses.append(py::dict(py::arg("pair_id") = p.pair_id, py::arg("source") = p.source,
                                py::arg("text") = p.text, py::arg("planted") = p.planted, py::arg("human") = p.human));
    }
    py::dict splits(py::arg("train") = from_corpus(r.splits.train), py::arg("valid") = from_corpus(r.splits.valid),
                    py::arg("test") = from_corpus(r.splits.test));
    return py::make_tuple(from_corpus(r.corpus), std::move(r.table), splits, responses);
  });

  m.def("train", [](const py::list& train_corpus, const py::list& valid_corpus, const EmbeddingTable& table,
                    const std::string& variant, const std::string& config_json, std::size_t jobs) {
    const auto v = parse_model_variant(variant);
    auto config = apply_json(default_config(v), nlohmann::json::parse(config_json));
    config.variant = v;
    const auto tr = to_corpus(train_corpus);
    const auto va = to_corpus(valid_corpus);
    TrainResult result;
    {
      py::gil_scoped_release release;
      result = train(tr, va, table, config, jobs);
    }
    py::list epochs;
    for (const auto& e : result.report.epochs) {
      epochs.append(py::dict(py::arg("epoch") = e.epoch, py::arg("train_loss") = e.train_loss,
                             py::arg("valid_loss") = e.valid_loss, py::arg("valid_accuracy") = e.valid_accuracy));
    }
    return py::make_tuple(std::move(result.params), epochs);
  });

  m.def("identify", [](const py::list& corpus, const py::list& test, const EmbeddingTable& table,
                       const ModelParams& params, const std::string& classes, std::uint64_t seed) {
        const auto report = identify(to_corpus(corpus), to_corpus(test), table, params, parse_class_list(classes), seed);
        py::dict means;
        for (const auto& c : report.classes) means[py::str(std::string(to_string(c.cls)))] = c.ci.mean;
        return py::make_tuple(report.accuracy, means);
      },
        py::arg("corpus"), py::arg("test"), py::arg("table"), py::arg("params"),
        py::arg("classes") = "GT,SC,SP,SS,Rand", py::arg("seed") = 0);
}
