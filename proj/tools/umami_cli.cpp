// Single-binary operator surface: corpus synthesis, the two forge passes,
// training, evaluation, and report rendering as subcommands. Exit codes:
// 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "umami/pipeline.hpp"
#include "umami/runconfig.hpp"

namespace {

std::string one_line(std::string text) {
  for (auto& c : text)
    if (c == '\n') c = ';';
  return text;
}

int fail(int code, const char* kind, const std::string& what) {
  std::cerr << "error: " << kind << ": " << one_line(what) << "\n";
  return code;
}

struct Opts {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  int stage = 1;
  std::string profile;
  long steps = 0;
  bool print_config = false;
  std::string report_json;
};

void add_common(CLI::App* cmd, Opts& o) {
  cmd->add_option("--config", o.config_path, "run configuration JSON file");
  cmd->add_option("--seed", o.seed, "root seed override");
  cmd->add_option("--out", o.out, "output path override (paths.out)");
  cmd->add_option("--profile", o.profile, "loss profile override")
      ->check(CLI::IsMember({"main-text-lambdas", "table9-lambdas"}));
  cmd->add_option("--steps", o.steps, "training step count override")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--print-config", o.print_config,
                "print the fully resolved configuration and exit");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale food multimodal pipeline"};
  app.require_subcommand(1);
  Opts o;

  CLI::App* make_corpus = app.add_subcommand("make-corpus", "synthesize the demo corpus");
  CLI::App* forge1 = app.add_subcommand("forge-stage1", "build single-round instruction shards");
  CLI::App* forge2 = app.add_subcommand("forge-stage2", "generate multi-round dialogue shards");
  CLI::App* train = app.add_subcommand("train", "train one stage and write checkpoints");
  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint over the forged shards");
  CLI::App* report = app.add_subcommand("report", "render a JSON metric report as text");
  for (CLI::App* cmd : {make_corpus, forge1, forge2, train, eval, report}) add_common(cmd, o);
  train->add_option("--stage", o.stage, "training stage")->check(CLI::Range(1, 2));
  report->add_option("report_json", o.report_json, "metric report JSON file")->required();

  CLI11_PARSE(app, argc, argv);
  CLI::App* sub = app.get_subcommands().front();

  try {
    umami::RunConfig cfg = sub->count("--config") ? umami::load_run_config(o.config_path)
                                                  : umami::RunConfig::defaults();
    if (sub->count("--seed")) cfg.seed = o.seed;
    if (sub->count("--out")) cfg.paths.out = o.out;
    if (sub->count("--profile")) {
      cfg.loss_profile = o.profile;
      cfg.apply_loss_profile();
    }
    if (sub->count("--steps")) {
      cfg.stage1.steps = o.steps;
      cfg.stage2.steps = o.steps;
    }
    if (o.print_config) {
      std::cout << umami::config_to_json_text(cfg);
      return 0;
    }

    if (sub == make_corpus) {
      auto r = umami::cmd_make_corpus(cfg);
      std::cout << "manifest=" << r.manifest << " datasets=" << r.datasets
                << " records=" << r.records << "\n";
    } else if (sub == forge1) {
      auto r = umami::cmd_forge_stage1(cfg);
      std::cout << "shards=" << r.shard_paths.size()
                << " conversations=" << r.stats.conversations << " stats=" << r.stats_path
                << "\n";
    } else if (sub == forge2) {
      auto r = umami::cmd_forge_stage2(cfg);
      std::cout << "dialogues=" << r.dialogues << " reason_segs=" << r.reason_segs
                << " rejections=" << r.rejections << " log=" << r.rejection_log << "\n";
    } else if (sub == train) {
      auto r = umami::cmd_train(cfg, o.stage);
      std::cout << "checkpoint=" << r.checkpoint << " log=" << r.log_path
                << " steps=" << r.steps << "\n";
    } else if (sub == eval) {
      auto r = umami::cmd_eval(cfg);
      std::cout << "report=" << r.json_path << " human=" << r.text_path << "\n";
    } else {
      std::string out_path = sub->count("--out") ? o.out : std::string();
      std::cout << "human=" << umami::cmd_report(o.report_json, out_path) << "\n";
    }
    return 0;
  } catch (const umami::ConfigError& e) {
    return fail(2, "config", e.what());
  } catch (const umami::DataError& e) {
    return fail(3, "data", e.what());
  } catch (const umami::NumericError& e) {
    return fail(4, "numeric", e.what());
  } catch (const std::exception& e) {
    return fail(1, "internal", e.what());
  }
}
