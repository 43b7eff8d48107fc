#include "langtail/cli.hpp"

#include "langtail/config.hpp"
#include "langtail/errors.hpp"
#include "langtail/eval.hpp"
#include "langtail/io.hpp"
#include "langtail/synth.hpp"
#include "langtail/train.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>

namespace langtail::cli {

namespace fs = std::filesystem;

namespace {

enum class LogLevel { quiet, info, debug };

LogLevel log_level() {
  const char* env = std::getenv("LANGTAIL_LOG");
  if (!env) return LogLevel::info;
  const std::string v(env);
  if (v == "quiet") return LogLevel::quiet;
  if (v == "debug") return LogLevel::debug;
  return LogLevel::info;
}

void log(LogLevel level, const std::string& msg) {
  if (level == LogLevel::quiet || log_level() < level) return;
  std::cerr << "langtail: " << msg << '\n';
}

std::string dashed(std::string key) {
  for (auto& c : key) c = c == '_' ? '-' : c;
  return key;
}

/// One subcommand: its schema plus the raw flag values CLI11 fills in.
struct Command {
  CLI::App* app = nullptr;
  config::RunConfig rc;
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> flags;
  std::map<std::string, CLI::Option*> options;

  Command(CLI::App& parent, const std::string& name, const std::string& help, std::vector<config::KeySpec> schema,
          bool with_config = true)
      : rc(std::move(schema)) {
    app = parent.add_subcommand(name, help);
    if (with_config) app->add_option("--config", config_file, "key = value settings file");
    for (const auto& k : rc.schema()) {
      const auto flag = "--" + dashed(k.name);
      if (k.kind == config::KeyKind::flag) {
        options[k.name] = app->add_flag(flag + ",!--no-" + dashed(k.name), flags[k.name]);
      } else {
        options[k.name] = app->add_option(flag, values[k.name])->default_str(k.default_value);
      }
    }
  }

  /// Defaults, then the config file, then flags.
  const config::RunConfig& resolve() {
    if (!config_file.empty()) rc.load_file(config_file);
    const auto cwd = fs::current_path();
    for (const auto& [key, opt] : options) {
      if (opt->count() == 0) continue;
      const auto it = flags.find(key);
      rc.set(key, it != flags.end() ? (it->second ? "true" : "false") : values[key], cwd);
    }
    return rc;
  }
};

std::vector<config::KeySpec> eval_schema() {
  return {{"pred", "", config::KeyKind::path},
          {"gt", "", config::KeyKind::path},
          {"out", "", config::KeyKind::path},
          {"unmatched", "merge"},
          {"tail", "2"}};
}

std::vector<config::KeySpec> transfer_schema() {
  return {{"checkpoint", "", config::KeyKind::path},
          {"corpus", "", config::KeyKind::path},
          {"gt", "", config::KeyKind::path},
          {"out", "", config::KeyKind::path},
          {"unmatched", "merge"}};
}

eval::UnmatchedPolicy policy(const config::RunConfig& rc) {
  const auto& u = rc.get("unmatched");
  if (u == "merge") return eval::UnmatchedPolicy::merge;
  if (u == "drop") return eval::UnmatchedPolicy::drop;
  throw ConfigError("'unmatched' must be merge or drop, got '" + u + "'");
}

fs::path prepare_out(const config::RunConfig& rc) {
  const auto out = rc.required_path("out");
  fs::create_directories(out);
  io::write_text_file(out / "config.resolved", rc.resolved());
  return out;
}

void run_synth(const config::RunConfig& rc) {
  const auto cfg = config::synth_config(rc);
  const auto out = prepare_out(rc);
  const auto corpus = synth::generate_corpus(cfg);
  synth::write_corpus(corpus, out);
  log(LogLevel::info, "wrote " + std::to_string(corpus.scenes.size()) + " scenes and " +
                          std::to_string(corpus.entities.size()) + " entities to " + out.string());
}

std::optional<fs::path> bank_dir(const config::RunConfig& rc) {
  if (rc.has("bank")) return rc.path("bank");
  return std::nullopt;
}

void run_bank(const config::RunConfig& rc) {
  const auto cfg = config::train_config(rc);
  const auto corpus = train::load_corpus(rc.required_path("corpus"), rc.required_path("bank"));
  train::Backbone backbone;
  if (rc.has("checkpoint")) {
    backbone = train::read_checkpoint(rc.path("checkpoint")).backbone;
  } else {
    backbone = train::Backbone::init(static_cast<std::size_t>(corpus.scenes.front().points.cols()), cfg.hidden,
                                     cfg.feature_dim, cfg.seed);
  }
  const auto out = prepare_out(rc);
  const auto bank = train::build_bank(backbone, corpus, cfg);
  io::write_feature_matrix(out / "bank_aligned.ltfm", bank.prototypes);
  std::ostringstream trace;
  trace << "step\tloss\n";
  for (std::size_t i = 0; i < bank.alignment_loss_trace.size(); ++i) {
    trace << i << '\t' << bank.alignment_loss_trace[i] << '\n';
  }
  io::write_text_file(out / "trace.tsv", trace.str());
  log(LogLevel::info, "aligned " + std::to_string(bank.size()) + " entities, loss " +
                          std::to_string(bank.alignment_loss_trace.front()) + " -> " +
                          std::to_string(bank.alignment_loss_trace.back()));
}

void run_train(const config::RunConfig& rc) {
  const auto cfg = config::train_config(rc);
  const auto corpus = train::load_corpus(rc.required_path("corpus"), bank_dir(rc));
  const auto out = prepare_out(rc);
  log(LogLevel::debug, "config:\n" + rc.resolved());
  const auto result = train::run_pipeline(cfg, corpus, out);
  if (!result.losses.empty()) {
    const auto& last = result.losses.back();
    log(LogLevel::info, "final epoch loss " + std::to_string(last.total) + " (local " + std::to_string(last.local) +
                            ", global " + std::to_string(last.global) + ", entity " + std::to_string(last.entity) + ")");
  }
  if (result.report) {
    log(LogLevel::info, "OA " + std::to_string(result.report->oa) + "  mAcc " + std::to_string(result.report->macc) +
                            "  mIoU " + std::to_string(result.report->miou));
  }
}

void write_eval(const fs::path& out, const eval::ConfusionMatrix& cm, const eval::EvalReport& report, std::size_t tail) {
  io::write_text_file(out / "report.tsv", eval::format_report(report));
  Matrix counts(static_cast<Eigen::Index>(cm.n_pred), static_cast<Eigen::Index>(cm.n_gt));
  for (std::size_t p = 0; p < cm.n_pred; ++p) {
    for (std::size_t g = 0; g < cm.n_gt; ++g) {
      counts(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g)) = static_cast<double>(cm.at(p, g));
    }
  }
  io::write_feature_matrix(out / "confusion.ltfm", counts);
  io::write_text_file(out / "tail.tsv", eval::format_tail_report(eval::tail_report(report)));
  log(LogLevel::info, "OA " + std::to_string(report.oa) + "  mAcc " + std::to_string(report.macc) + "  mIoU " +
                          std::to_string(report.miou) + "  tail IoU " + std::to_string(eval::tail_iou(report, tail)));
}

void run_eval(const config::RunConfig& rc, bool tail_only) {
  const auto pred = io::read_labels(rc.required_path("pred"));
  const auto gt = io::read_labels(rc.required_path("gt"));
  const auto cm = eval::confusion(pred, gt);
  const auto report = eval::match_and_score(cm, policy(rc));
  const auto out = rc.has("out") ? rc.path("out") : rc.path("pred").parent_path();
  fs::create_directories(out);
  const auto tail = rc.get_size("tail");
  if (tail_only) {
    const auto rows = eval::tail_report(report);
    io::write_text_file(out / "tail.tsv", eval::format_tail_report(rows));
    std::size_t absorbed = 0;
    for (const auto& r : rows) absorbed += r.absorbed ? 1 : 0;
    log(LogLevel::info, std::to_string(absorbed) + " absorbed classes, tail IoU " +
                            std::to_string(eval::tail_iou(report, tail)));
  } else {
    write_eval(out, cm, report, tail);
  }
}

void run_transfer(const config::RunConfig& rc) {
  const auto ck = train::read_checkpoint(rc.required_path("checkpoint"));
  const auto corpus_dir = rc.required_path("corpus");
  const auto corpus = train::load_corpus(corpus_dir, std::nullopt);
  const auto out = prepare_out(rc);
  const auto features = train::extract_features(ck.backbone, corpus.scenes);
  Eigen::Index rows = 0;
  for (const auto& f : features) rows += f.rows();
  Matrix all(rows, static_cast<Eigen::Index>(ck.backbone.output_dim()));
  rows = 0;
  for (const auto& f : features) {
    all.middleRows(rows, f.rows()) = f;
    rows += f.rows();
  }
  const auto pred = eval::prototype_transfer(ck.models, all);
  io::write_labels(out / "pred.ltlb", pred);
  log(LogLevel::info, "transferred " + std::to_string(eval::prototype_count(ck.models)) + " prototypes to " +
                          std::to_string(pred.size()) + " points");
  const auto gt_path = rc.has("gt") ? rc.path("gt") : corpus_dir / "labels.ltlb";
  if (fs::exists(gt_path)) {
    const auto cm = eval::confusion(pred, io::read_labels(gt_path));
    write_eval(out, cm, eval::match_and_score(cm, policy(rc)), 2);
  }
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
  CLI::App app{"Unsupervised long-tail 3D segmentation by clustering", "langtail"};
  app.require_subcommand(1);
  Command synth(app, "synth", "generate a synthetic long-tail corpus", config::synth_schema());
  Command bank(app, "bank", "build and align the entity bank", config::train_schema());
  Command train(app, "train", "run warmup, bank and clustering rounds", config::train_schema());
  Command evaluate(app, "eval", "Hungarian-matched OA, mAcc and mIoU", eval_schema());
  Command transfer(app, "transfer", "label a corpus with checkpoint prototypes", transfer_schema());
  Command report(app, "report", "per-class count and IoU table, rare classes last", eval_schema());

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, std::cerr, std::cerr);
    return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    if (synth.app->parsed()) run_synth(synth.resolve());
    if (bank.app->parsed()) run_bank(bank.resolve());
    if (train.app->parsed()) run_train(train.resolve());
    if (evaluate.app->parsed()) run_eval(evaluate.resolve(), false);
    if (transfer.app->parsed()) run_transfer(transfer.resolve());
    if (report.app->parsed()) run_eval(report.resolve(), true);
  } catch (const Error& e) {
    std::cerr << "langtail: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "langtail: IoError: " << e.what() << '\n';
    return static_cast<int>(ExitCode::data);
  } catch (const std::bad_alloc&) {
    std::cerr << "langtail: out of memory\n";
    return static_cast<int>(ExitCode::data);
  }
  return static_cast<int>(ExitCode::ok);
}

}  // namespace langtail::cli
