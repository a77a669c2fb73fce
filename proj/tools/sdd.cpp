#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cli_commands.hpp"
#include "sdd/service.hpp"

namespace {

sdd::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

void add_common(CLI::App* cmd, sdd::cli::CommonOptions& o, bool drill_flags) {
  cmd->add_option("dataset", o.dataset, "CSV or whitespace-delimited data file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--schema", o.schema, "schema file (default: sidecar next to the data)")->check(CLI::ExistingFile);
  cmd->add_option("--cols", o.cols, "keep only the first n categorical columns");
  cmd->add_option("--sum", o.sum, "aggregate Sum over this measure column instead of Count");
  cmd->add_option("--out", o.out, "output format")->check(CLI::IsMember({"table", "json", "csv"}))->capture_default_str();
  if (!drill_flags) return;
  cmd->add_option("--k", o.k, "rules per expansion")->capture_default_str();
  cmd->add_option("--weight", o.weight, "weighting function")
      ->check(CLI::IsMember({"size", "bits", "size-minus-one", "parametric"}))
      ->capture_default_str();
  cmd->add_option("--mw", o.mw, "weight cap, or 'auto'")->capture_default_str();
  cmd->add_option("--minss", o.min_ss, "minimum sample size")->capture_default_str();
  cmd->add_option("--mem", o.memory, "sample memory in rows")->capture_default_str();
  cmd->add_option("--favor", o.favor, "favored columns");
  cmd->add_option("--ignore", o.ignore, "ignored columns");
  cmd->add_option("--seed", o.seed, "random seed")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Smart drill-down over categorical tables"};
  app.require_subcommand(1);

  sdd::cli::CommonOptions opts;

  auto* summarize = app.add_subcommand("summarize", "print the k best rules of a table");
  add_common(summarize, opts, true);

  std::string script;
  auto* replay = app.add_subcommand("replay", "apply a gesture script and print the resulting tree");
  add_common(replay, opts, true);
  replay->add_option("script", script, "gesture script ('-' for stdin)")->required();
  opts.out = "table";

  sdd::cli::BenchOptions bench_opts;
  auto* bench = app.add_subcommand("bench", "sweep m_w or minSS and report time and error as CSV");
  add_common(bench, opts, true);
  bench->add_option("--sweep", bench_opts.sweep, "parameter to sweep")->check(CLI::IsMember({"mw", "minss"}))->required();
  bench->add_option("--values", bench_opts.values, "parameter values")->delimiter(',')->required();
  bench->add_option("--trials", bench_opts.trials, "trials per value")->capture_default_str();

  std::optional<std::string> save;
  auto* ingest = app.add_subcommand("ingest", "load a data file and report its columns");
  add_common(ingest, opts, false);
  ingest->add_option("--save", save, "write the decoded table as CSV");

  std::optional<std::string> config_path, listen, dataset_dir;
  std::vector<std::string> datasets;
  auto* serve = app.add_subcommand("serve", "run the HTTP JSON API");
  serve->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  serve->add_option("--listen", listen, "host:port");
  serve->add_option("--dataset-dir", dataset_dir, "directory dataset paths are resolved against");
  serve->add_option("--dataset", datasets, "register a data file at startup (repeatable)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*summarize) return sdd::cli::summarize(opts, std::cout);
    if (*replay) {
      if (replay->count("--out") == 0) opts.out = "json";
      if (script == "-") return sdd::cli::replay(opts, std::cin, std::cout, std::cerr);
      std::ifstream in(script);
      if (!in) throw sdd::Error(sdd::ErrorCode::io, "cannot open script '" + script + "'");
      return sdd::cli::replay(opts, in, std::cout, std::cerr);
    }
    if (*bench) return sdd::cli::bench(opts, bench_opts, std::cout);
    if (*ingest) return sdd::cli::ingest(opts, save, std::cout);
    if (*serve) {
      auto config = sdd::load_service_config(config_path);
      if (listen) sdd::apply_listen(config, *listen);
      if (dataset_dir) config.dataset_dir = *dataset_dir;
      sdd::Service service(config);
      for (const auto& d : datasets) {
        auto rec = service.register_dataset(sdd::Json{{"path", d}});
        std::cerr << "dataset " << rec.id << ": " << d << "\n";
      }
      int port = service.bind();
      std::cerr << "listening on " << config.host << ":" << port << "\n";
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      service.listen();
      g_service = nullptr;
      return 0;
    }
  } catch (const sdd::Error& e) {
    std::cerr << "error: " << sdd::to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
