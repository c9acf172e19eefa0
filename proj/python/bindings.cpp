#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "msr/config.hpp"
#include "msr/error.hpp"
#include "msr/metrics.hpp"
#include "msr/pipeline.hpp"
#include "msr/preference.hpp"
#include "msr/recommender.hpp"
#include "msr/sft.hpp"
#include "msr/synthetic.hpp"

namespace py = pybind11;
using namespace msr;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict run_pipeline(const std::filesystem::path& config_path, const std::vector<std::string>& stages,
                      std::optional<std::filesystem::path> workdir, std::optional<std::uint64_t> seed,
                      bool mock, bool force) {
  auto config = pipeline::RunConfig::load(config_path);
  if (workdir) config.workdir = *workdir;
  if (seed) config.seeds = {*seed};
  if (mock) config.mock.enabled = true;
  std::vector<pipeline::Stage> order;
  for (const auto& s : stages) order.push_back(pipeline::stage_from_string(s));
  if (order.empty()) order = pipeline::default_run_stages();

  pipeline::Pipeline p(config);
  pipeline::RunManifest manifest;
  {
    py::gil_scoped_release release;
    manifest = p.run(order, force);
  }
  py::dict out;
  out["manifest"] = to_py(manifest.to_json());
  for (auto s : order)
    if (s == pipeline::Stage::kEvaluate) out["report"] = to_py(eval::to_json(p.combined_report()));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the msr recommendation pipeline";

  static py::exception<Error> base(m, "MsrError");
  static py::exception<DependencyError> dependency(m, "DependencyError", base.ptr());
  static py::exception<ConfigError> config(m, "ConfigError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const DependencyError& e) {
      py::set_error(dependency, e.what());
    } catch (const ConfigError& e) {
      py::set_error(config, e.what());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  m.def("interaction_probability", &recommender::interaction_probability, py::arg("p_yes"),
        py::arg("p_no"));
  m.def(
      "extract_yes_no",
      [](const std::vector<std::pair<std::string, double>>& top, const std::string& policy) {
        std::vector<gateway::TokenLogprob> tokens;
        for (const auto& [t, lp] : top) tokens.push_back({t, lp});
        auto mass = recommender::extract_yes_no(tokens, recommender::extraction_policy_from_string(policy));
        return std::make_pair(mass.p_yes_raw, mass.p_no_raw);
      },
      py::arg("top_logprobs"), py::arg("policy") = "neutral");

  m.def(
      "segment_blocks",
      [](const std::vector<std::string>& history, std::size_t block_size) {
        std::vector<std::vector<std::string>> out;
        for (auto& b : preference::segment_blocks(history, block_size)) out.push_back(std::move(b.item_ids));
        return out;
      },
      py::arg("history"), py::arg("block_size"));

  py::class_<eval::UserEvalRecord>(m, "UserEvalRecord")
      .def_readonly("user_id", &eval::UserEvalRecord::user_id)
      .def_readonly("positive_score", &eval::UserEvalRecord::positive_score)
      .def_readonly("negative_scores", &eval::UserEvalRecord::negative_scores)
      .def_readonly("rank", &eval::UserEvalRecord::rank);
  m.def("make_record", &eval::make_record, py::arg("user_id"), py::arg("positive_id"),
        py::arg("positive_score"), py::arg("negatives"));
  m.def("auc", &eval::auc_per_user, py::arg("record"));
  m.def("hit_rate", &eval::hit_rate_at_k, py::arg("record"), py::arg("k") = 5);
  m.def("mrr", &eval::mrr_at_k, py::arg("record"), py::arg("k") = 5);
  m.def("t_half_width", &eval::t_half_width, py::arg("values"), py::arg("confidence") = 0.95);

  m.def(
      "make_fixture",
      [](const std::filesystem::path& dir, std::size_t users, std::size_t items, std::uint64_t seed,
         bool images) {
        synthetic::FixtureSpec spec;
        spec.users = users;
        spec.items = items;
        spec.seed = seed;
        spec.images = images;
        synthetic::write_fixture(dir, spec);
      },
      py::arg("dir"), py::arg("users") = 20, py::arg("items") = 60, py::arg("seed") = 1,
      py::arg("images") = true);

  m.def("run", &run_pipeline, py::arg("config"), py::arg("stages") = std::vector<std::string>{},
        py::arg("workdir") = py::none(), py::arg("seed") = py::none(), py::arg("mock") = false,
        py::arg("force") = false,
        "Runs pipeline stages; returns {'manifest': ..., 'report': ...}.");

  m.def(
      "load_sft_dataset",
      [](const std::filesystem::path& path) {
        auto ds = sft::parse_dataset(path);
        py::list examples;
        for (const auto& e : ds.examples) {
          py::list conv;
          for (const auto& t : e.conversation) conv.append(py::dict(py::arg("role") = t.role, py::arg("text") = t.text));
          examples.append(py::dict(py::arg("id") = e.id, py::arg("conversation") = conv,
                                   py::arg("images") = e.images, py::arg("label") = sft::to_string(e.label)));
        }
        return py::make_tuple(ds.meta.fold, ds.meta.train_ratio, examples);
      },
      py::arg("path"), "Returns (fold, train_ratio, examples).");

  m.def("default_config_yaml", &pipeline::default_config_yaml);
}
