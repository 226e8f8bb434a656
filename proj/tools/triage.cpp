#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "triage/corpus.hpp"
#include "triage/error.hpp"
#include "triage/service.hpp"
#include "triage/simulator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace triage;

namespace {

InputFormat format_for(const fs::path& path, const std::string& flag) {
  if (!flag.empty()) return parse_format(flag);
  return path.extension() == ".jsonl" || path.extension() == ".ndjson" ? InputFormat::kJsonl
                                                                        : InputFormat::kCsv;
}

// ---------------------------------------------------------------------------
// ingest

struct IngestArgs {
  std::string input;
  std::string format;
  std::string out = "corpus";
};

int cmd_ingest(const IngestArgs& a) {
  const Corpus corpus = ingest(a.input, format_for(a.input, a.format));
  const auto filters = default_filters();
  const auto texts = prepare_texts(corpus, filters);
  fs::create_directories(a.out);
  write_jsonl(corpus, fs::path(a.out) / "corpus.jsonl");

  std::size_t sentences = 0, dropped = 0, all_dropped = 0;
  {
    std::ofstream out(fs::path(a.out) / "texts.jsonl", std::ios::trunc);
    for (const auto& t : texts) {
      sentences += t.sentence_count;
      dropped += t.dropped_sentence_count;
      if (t.all_dropped) ++all_dropped;
      out << json{{"doc_id", t.doc_id}, {"text", t.text}}.dump() << '\n';
    }
  }
  json filter_names = json::array();
  for (const auto& f : filters) filter_names.push_back(f.name);
  const json report{{"n", corpus.size()},
                    {"duplicates", corpus.duplicate_count()},
                    {"skipped_rows", corpus.skipped_rows()},
                    {"sentences", sentences},
                    {"dropped_sentences", dropped},
                    {"all_dropped_documents", all_dropped},
                    {"filters", filter_names}};
  std::ofstream(fs::path(a.out) / "report.json", std::ios::trunc) << report.dump(2) << '\n';
  std::cout << report.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string corpus;
  std::string labels;
  std::string format;
  bool synthetic = false;
  std::size_t n = 10000;
  double prevalence = 0.077;
  double signal = 0.9;
  std::uint64_t seed = 7;
  std::vector<std::string> strategies{"hp", "lc", "random"};
  std::vector<std::size_t> sizes{500, 1000, 2000};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double target_ir = 0.8;
  std::size_t batch_size = 250;
  std::size_t init_size = 500;
  int epochs = 5;
  double learning_rate = 0.1;
  int ensemble = 1;
  unsigned threads = 0;
  std::string mode = "experiment";
  double train_fraction = 0.85;
  std::string out = "experiment";
};

void print_table(const ComparisonTable& t) {
  std::printf("%-8s %6s %10s %8s %10s %10s\n", "strategy", "size", "he@target", "se", "saved_rel",
              "hours");
  std::printf("%-8s %6s %10.4f %8s %10s %10s\n", "no-ml", "-", t.control_he.mean,
              t.control_he.standard_error
                  ? std::to_string(*t.control_he.standard_error).substr(0, 6).c_str()
                  : "-",
              "-", "-");
  for (const auto& r : t.strategies) {
    if (r.unreachable) {
      std::printf("%-8s %6s %10s\n", std::string(strategy_name(r.strategy)).c_str(), "-",
                  "unreachable");
      continue;
    }
    std::printf("%-8s %6zu %10.4f %8s %9.1f%% %10.1f\n",
                std::string(strategy_name(r.strategy)).c_str(), *r.best_size, r.best_he->mean,
                r.best_he->standard_error
                    ? std::to_string(*r.best_he->standard_error).substr(0, 6).c_str()
                    : "-",
                100.0 * r.saved_vs_control->relative, *r.hours_saved_vs_control);
  }
}

int cmd_simulate(const SimulateArgs& a) {
  if (!(a.target_ir > 0.0 && a.target_ir <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "target-ir: must lie in (0, 1]");
  }
  TrainConfig train;
  train.epochs = a.epochs;
  train.learning_rate = a.learning_rate;

  OracleCorpus corpus;
  if (a.synthetic) {
    corpus = generate_synthetic_corpus(a.n, a.prevalence, a.signal, a.seed);
  } else {
    if (a.corpus.empty() || a.labels.empty()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "corpus: give --corpus and --labels, or --synthetic");
    }
    corpus = make_oracle_corpus(ingest(a.corpus, format_for(a.corpus, a.format)),
                                read_truth(a.labels));
  }

  if (a.mode == "holdout-eval") {
    const auto r = run_holdout(corpus, a.train_fraction, a.seed, train, a.target_ir);
    fs::create_directories(a.out);
    std::ofstream(fs::path(a.out) / "holdout.json", std::ios::trunc) << to_json(r).dump(2) << '\n';
    std::cout << to_json(r).dump(2) << '\n';
    return 0;
  }
  if (a.mode != "experiment") {
    throw Error(ErrorCode::kInvalidArgument, "mode: expected experiment or holdout-eval");
  }

  ExperimentConfig cfg;
  cfg.strategies.clear();
  for (const auto& s : a.strategies) cfg.strategies.push_back(parse_strategy(s));
  cfg.training_sizes = a.sizes;
  cfg.seeds = a.seeds;
  cfg.target_ir = a.target_ir;
  cfg.batch_size = a.batch_size;
  cfg.init_size = a.init_size;
  cfg.train = train;
  cfg.ensemble_runs = a.ensemble;
  cfg.threads = a.threads;

  const auto result = run_experiment(corpus, cfg);
  const auto table = compare_strategies(result);
  write_report(result, table, a.out);
  std::printf("n=%zu included=%zu prevalence=%.4f\n", corpus.size(), corpus.n_included,
              corpus.prevalence);
  print_table(table);
  std::printf("report written to %s\n", a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// serve

struct ServeArgs {
  std::string addr = "127.0.0.1:8080";
  std::string data_dir = "data";
  std::string token;
  int threads = 8;
};

int cmd_serve(const ServeArgs& a) {
  const auto colon = a.addr.rfind(':');
  if (colon == std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "addr: expected host:port");
  }
  const std::string host = a.addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(a.addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "addr: bad port");
  }

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ServiceOptions options;
  options.data_dir = a.data_dir;
  options.token = a.token;
  options.threads = a.threads;
  Service service(options);
  const int bound = service.bind(host, port);
  if (bound < 0) {
    std::cerr << "error: cannot listen on " << a.addr << '\n';
    return 1;
  }
  std::cout << "listening on " << host << ':' << bound << " (" << service.recovered_projects()
            << " projects recovered)" << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
  });
  service.run();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
  std::vector<std::string> dirs;
  std::string out;
};

void collect(const fs::path& dir, std::vector<fs::path>& found) {
  if (fs::exists(dir / "summary.json")) {
    found.push_back(dir);
    return;
  }
  if (!fs::is_directory(dir)) return;
  std::vector<fs::path> children;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "summary.json")) children.push_back(e.path());
  }
  std::sort(children.begin(), children.end());
  found.insert(found.end(), children.begin(), children.end());
}

std::string csv_num(const json& v) {
  if (v.is_null()) return "";
  std::ostringstream s;
  s.precision(10);
  s << v.get<double>();
  return s.str();
}

int cmd_report(const ReportArgs& a) {
  std::vector<fs::path> experiments;
  for (const auto& d : a.dirs) collect(d, experiments);
  if (experiments.empty()) throw Error(ErrorCode::kNotFound, "no results");

  std::set<std::string> ids;
  for (const auto& e : experiments) {
    if (!ids.insert(e.filename().string()).second) {
      throw Error(ErrorCode::kConflict, "duplicate experiment id: " + e.filename().string());
    }
  }
  const fs::path out = a.out.empty() ? fs::path(a.dirs.front()) : fs::path(a.out);
  fs::create_directories(out);

  std::ofstream table(out / "report_summary.csv", std::ios::trunc);
  table << "experiment,strategy,training_size,he_mean,he_se,unreachable_seeds,pool_f1_mean,"
           "validation_f1_mean,al_inclusion_fraction\n";
  std::ofstream longf(out / "report_long.csv", std::ios::trunc);
  longf << "experiment,strategy,size,seed,he,ir\n";

  std::printf("%-20s %-8s %6s %10s %8s %8s\n", "experiment", "strategy", "size", "he@target",
              "pool_f1", "val_f1");
  for (const auto& dir : experiments) {
    const auto id = dir.filename().string();
    std::ifstream in(dir / "summary.json");
    const json summary = json::parse(in);
    for (const auto& row : summary.at("comparison").at("strategies")) {
      for (const auto& s : row.at("sizes")) {
        const auto mean = [&](const char* key) {
          return s.at(key).is_null() ? json(nullptr) : s.at(key).at("mean");
        };
        const json he_se =
            s.at("he_at_target").is_null() ? json(nullptr) : s.at("he_at_target").at("se");
        table << id << ',' << row.at("strategy").get<std::string>() << ','
              << s.at("training_size").get<std::size_t>() << ',' << csv_num(mean("he_at_target"))
              << ',' << csv_num(he_se) << ',' << s.at("unreachable_seeds").get<std::size_t>()
              << ',' << csv_num(mean("pool_f1")) << ',' << csv_num(mean("validation_f1")) << ','
              << csv_num(mean("al_inclusion_fraction")) << '\n';
        std::printf("%-20s %-8s %6zu %10s %8s %8s\n", id.c_str(),
                    row.at("strategy").get<std::string>().c_str(),
                    s.at("training_size").get<std::size_t>(),
                    csv_num(mean("he_at_target")).substr(0, 6).c_str(),
                    csv_num(mean("pool_f1")).substr(0, 6).c_str(),
                    csv_num(mean("validation_f1")).substr(0, 6).c_str());
      }
    }
    std::ifstream lin(dir / "long.csv");
    std::string line;
    std::getline(lin, line);
    while (std::getline(lin, line)) longf << id << ',' << line << '\n';
  }
  if (!table || !longf) throw Error(ErrorCode::kIo, "cannot write report to " + out.string());
  std::printf("%zu experiment(s); report written to %s\n", experiments.size(),
              out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Screening prioritization engine and simulator"};
  app.set_config("--config", "", "key=value configuration file; flags override it");
  app.require_subcommand(1);

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "Read a CSV/JSONL corpus and write a snapshot");
  ingest_cmd->add_option("input", ingest_args.input, "Input file")->required();
  ingest_cmd->add_option("--format", ingest_args.format, "csv or jsonl (default: by extension)");
  ingest_cmd->add_option("--out", ingest_args.out, "Output directory")->capture_default_str();

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run strategy experiments with an oracle screener");
  sim_cmd->add_option("--corpus", sim.corpus, "Labeled corpus file");
  sim_cmd->add_option("--labels", sim.labels, "doc_id,label file for --corpus");
  sim_cmd->add_option("--format", sim.format, "csv or jsonl (default: by extension)");
  sim_cmd->add_flag("--synthetic", sim.synthetic, "Use the synthetic generator");
  sim_cmd->add_option("--n", sim.n, "Synthetic corpus size")->capture_default_str();
  sim_cmd->add_option("--prevalence", sim.prevalence, "Synthetic prevalence")->capture_default_str();
  sim_cmd->add_option("--signal", sim.signal, "Synthetic signal strength")->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed, "Corpus and holdout seed")->capture_default_str();
  sim_cmd->add_option("--strategies", sim.strategies, "hp, lc, random")
      ->delimiter(',')
      ->capture_default_str();
  sim_cmd->add_option("--sizes", sim.sizes, "Training sizes")->delimiter(',')->capture_default_str();
  sim_cmd->add_option("--seeds", sim.seeds, "Cell seeds")->delimiter(',')->capture_default_str();
  sim_cmd->add_option("--target-ir", sim.target_ir, "Inclusion-rate target")->capture_default_str();
  sim_cmd->add_option("--batch-size", sim.batch_size, "Active-learning batch")->capture_default_str();
  sim_cmd->add_option("--init-size", sim.init_size, "Random bootstrap batch")->capture_default_str();
  sim_cmd->add_option("--epochs", sim.epochs, "SGD epochs")->capture_default_str();
  sim_cmd->add_option("--learning-rate", sim.learning_rate, "SGD step")->capture_default_str();
  sim_cmd->add_option("--ensemble", sim.ensemble, "Models averaged per iteration")
      ->capture_default_str();
  sim_cmd->add_option("--threads", sim.threads, "Worker threads (0: all cores)")
      ->capture_default_str();
  sim_cmd->add_option("--mode", sim.mode, "experiment or holdout-eval")->capture_default_str();
  sim_cmd->add_option("--train-fraction", sim.train_fraction, "holdout-eval training share")
      ->capture_default_str();
  sim_cmd->add_option("--out", sim.out, "Report directory")->capture_default_str();

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--addr", serve.addr, "host:port")->capture_default_str();
  serve_cmd->add_option("--data-dir", serve.data_dir, "Project storage")->capture_default_str();
  serve_cmd->add_option("--token", serve.token, "Static bearer token")->envname("TRIAGE_TOKEN");
  serve_cmd->add_option("--threads", serve.threads, "Request workers")->capture_default_str();

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "Merge experiment directories into CSV tables");
  report_cmd->add_option("dirs", report.dirs, "Experiment directories or their parent")
      ->required();
  report_cmd->add_option("--out", report.out, "Output directory (default: first input)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest_cmd) return cmd_ingest(ingest_args);
    if (*sim_cmd) return cmd_simulate(sim);
    if (*serve_cmd) return cmd_serve(serve);
    if (*report_cmd) return cmd_report(report);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
