#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <iostream>

#include "msr/config.hpp"
#include "msr/error.hpp"
#include "msr/pipeline.hpp"
#include "msr/synthetic.hpp"
#include "msr/templates.hpp"

using namespace msr;
using pipeline::Stage;

namespace {

struct Globals {
  std::string config = "msr.yaml";
  std::optional<std::uint64_t> seed;
  bool mock = false;
  bool no_cache = false;
  std::string workdir;
  bool force = false;
  bool verbose = false;
};

struct Overrides {
  std::string summarize_mode;
  bool single_call = false;
  std::string preference_mode;
  std::optional<std::size_t> block_size;
  std::optional<std::size_t> summary_length;
  std::optional<int> fold;
  std::optional<std::size_t> train_ratio;
  std::string backend;
  std::string loss_span;
  std::optional<std::size_t> k;
  std::vector<std::string> stages;
};

pipeline::RunConfig load_config(const Globals& g, const Overrides& o) {
  auto c = pipeline::RunConfig::load(g.config);
  if (g.seed) c.seeds = {*g.seed};
  if (g.mock) c.mock.enabled = true;
  if (g.no_cache) c.use_cache = false;
  if (!g.workdir.empty()) c.workdir = g.workdir;
  if (!o.summarize_mode.empty()) c.summarize_mode = items::summary_mode_from_string(o.summarize_mode);
  if (o.single_call) c.single_call = true;
  if (!o.preference_mode.empty())
    c.preference_mode = preference::preference_mode_from_string(o.preference_mode);
  if (o.block_size) c.block_size = *o.block_size;
  if (o.summary_length) c.summary_length = *o.summary_length;
  if (o.train_ratio) c.train_ratio = *o.train_ratio;
  if (o.k) c.k = *o.k;
  if (!o.loss_span.empty()) {
    if (o.loss_span == "full")
      c.loss_span = gateway::LossSpan::kFull;
    else if (o.loss_span == "completion")
      c.loss_span = gateway::LossSpan::kCompletion;
    else
      throw ConfigError("--loss-span must be completion|full");
  }
  if (!o.backend.empty()) {
    if (!c.backends.contains(o.backend)) throw ConfigError("unknown backend '" + o.backend + "'");
    c.roles[gateway::Role::kRecommenderMllm] = o.backend;
  }
  return c;
}

void print_manifest(const pipeline::RunManifest& m) {
  for (const auto& s : m.stages) {
    std::cout << fmt::format("{:<18} {:<8} calls={:<6} cache_hits={:<6} {:.2f}s\n",
                             s.stage + (s.seed ? fmt::format("@{}", *s.seed) : ""),
                             s.reused ? "reused" : "ran", s.calls.backend_calls(), s.calls.cache_hits(),
                             s.wall_seconds);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"msr: multimodal sequential recommendation pipeline"};
  app.require_subcommand(1);
  Globals g;
  Overrides o;
  app.add_option("-c,--config", g.config, "YAML run configuration");
  app.add_option("--seed", g.seed, "Override the configured seeds with one seed");
  app.add_flag("--mock", g.mock, "Use the deterministic mock backend for every role");
  app.add_flag("--no-cache", g.no_cache, "Bypass the response cache");
  app.add_option("--workdir", g.workdir, "Override the working directory");
  app.add_flag("--force", g.force, "Recompute stages even when complete");
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");

  auto add_stage = [&](const char* name, const char* help) { return app.add_subcommand(name, help); };
  add_stage("ingest", "Load, deduplicate, filter and split the interaction data");
  auto* summarize = add_stage("summarize-items", "Summarize every history item");
  summarize->add_option("--mode", o.summarize_mode, "full | text_only");
  summarize->add_flag("--single-call", o.single_call, "One combined item prompt instead of three");
  auto* prefs = add_stage("infer-preferences", "Infer a preference summary per user");
  prefs->add_option("--mode", o.preference_mode, "recurrent | direct");
  prefs->add_option("--block-size", o.block_size);
  prefs->add_option("--summary-length", o.summary_length);
  auto* sft = add_stage("build-sft", "Write fine-tuning datasets per fold");
  sft->add_option("--fold", o.fold);
  sft->add_option("--train-ratio", o.train_ratio);
  auto* loss = add_stage("eval-loss", "Teacher-forced loss over a fold's dataset");
  loss->add_option("--fold", o.fold);
  loss->add_option("--backend", o.backend, "Declared backend to score with (e.g. a fine-tuned adapter)");
  loss->add_option("--loss-span", o.loss_span, "completion | full");
  auto* score = add_stage("score", "Score every evaluation candidate");
  score->add_option("--fold", o.fold);
  auto* evaluate = add_stage("evaluate", "Compute AUC, HR@K and MRR@K");
  evaluate->add_option("--k", o.k);
  auto* run = add_stage("run", "Run several stages in order");
  run->add_option("--stages", o.stages, "Stage names (default: everything except eval-loss)")->delimiter(',');

  std::string sweep_param;
  std::vector<std::size_t> sweep_values;
  auto* sweep = add_stage("sweep", "Evaluate once per value of block_size or summary_length");
  sweep->add_option("parameter", sweep_param)->required()->check(CLI::IsMember({"block_size", "summary_length"}));
  sweep->add_option("values", sweep_values)->required();

  std::string fixture_dir;
  synthetic::FixtureSpec fixture;
  auto* make_fixture = add_stage("make-fixture", "Write a synthetic dataset with a mock config");
  make_fixture->add_option("dir", fixture_dir)->required();
  make_fixture->add_option("--users", fixture.users);
  make_fixture->add_option("--items", fixture.items);
  make_fixture->add_option("--fixture-seed", fixture.seed);
  make_fixture->add_flag("!--no-images", fixture.images);

  std::string out_dir;
  auto* write_templates = add_stage("write-templates", "Copy the default prompt templates into a directory");
  write_templates->add_option("dir", out_dir)->required();
  std::string config_out;
  auto* write_config = add_stage("write-config", "Write an annotated default configuration");
  write_config->add_option("path", config_out)->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_pattern("%H:%M:%S %^%l%$ %v");

  try {
    auto* cmd = app.get_subcommands().front();
    const std::string verb = cmd->get_name();
    if (verb == "make-fixture") {
      synthetic::write_fixture(fixture_dir, fixture);
      std::cout << "fixture written to " << fixture_dir << "\n";
      return 0;
    }
    if (verb == "write-templates") {
      prompts::TemplateSet::defaults().save(out_dir);
      return 0;
    }
    if (verb == "write-config") {
      write_file_atomic(config_out, pipeline::default_config_yaml());
      return 0;
    }

    auto config = load_config(g, o);
    if (verb == "sweep") {
      auto report = pipeline::sweep(config, sweep_param, sweep_values);
      std::cout << report.table();
      return 0;
    }

    std::vector<Stage> stages;
    if (verb == "run") {
      if (o.stages.empty())
        stages = pipeline::default_run_stages();
      else
        for (const auto& s : o.stages) stages.push_back(pipeline::stage_from_string(s));
    } else {
      stages = {pipeline::stage_from_string(verb)};
    }
    pipeline::Pipeline p(config);
    auto manifest = p.run(stages, g.force, o.fold);
    print_manifest(manifest);
    if (std::find(stages.begin(), stages.end(), Stage::kEvaluate) != stages.end())
      std::cout << eval::format_table(p.combined_report());
    return 0;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
