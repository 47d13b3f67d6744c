// ssrem: corpus preparation, training, scoring and the evaluation experiments.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ssrem/common.hpp"
#include "ssrem/corpus.hpp"
#include "ssrem/embed.hpp"
#include "ssrem/experiments.hpp"
#include "ssrem/format.hpp"
#include "ssrem/model.hpp"
#include "ssrem/parallel.hpp"
#include "ssrem/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ssrem;

namespace {

struct Common {
  std::string out_dir = "out";
  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
};

// Collects written files and emits manifest.json with the config echo.
class OutputDir {
 public:
  OutputDir(const std::string& dir, std::string command, json config)
      : dir_(dir), command_(std::move(command)), config_(std::move(config)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw DataError("cannot create output directory " + dir);
  }

  fs::path path(const std::string& name) {
    files_.push_back(name);
    return dir_ / name;
  }

  std::ofstream open(const std::string& name) {
    std::ofstream out(path(name), std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir_ / name).string());
    return out;
  }

  void finish() {
    write_text("config.json", config_.dump(2) + "\n");
    json files = json::array();
    for (const auto& f : files_) files.push_back({{"path", f}, {"sha256", sha256_file(dir_ / f)}});
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << json{{"command", command_}, {"config", config_}, {"files", files}}.dump(2) << "\n";
    if (!out) throw DataError("cannot write manifest in " + dir_.string());
  }

  void write_text(const std::string& name, const std::string& text) {
    auto out = open(name);
    out << text;
    if (!out) throw DataError("failed writing " + (dir_ / name).string());
  }

 private:
  fs::path dir_;
  std::string command_;
  json config_;
  std::vector<std::string> files_;
};

void require_file(const std::string& path, std::string_view what) {
  if (path.empty()) throw UsageError(std::string(what) + " path is required");
  if (!fs::is_regular_file(path)) throw DataError(std::string(what) + " not found: " + path);
}

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  require_file(path, "config file");
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("config file " + path + ": " + e.what());
  }
}

std::array<double, 3> parse_ratios(const std::string& text) {
  std::array<double, 3> out{};
  std::stringstream ss(text);
  std::string field;
  std::size_t i = 0;
  while (std::getline(ss, field, ',')) {
    if (i == 3) throw UsageError("--ratios takes three values");
    try {
      out[i++] = parse_double(field);
    } catch (const std::exception&) {
      throw UsageError("bad ratio '" + field + "'");
    }
  }
  if (i != 3) throw UsageError("--ratios takes three values");
  return out;
}

ClassCounts parse_counts(const std::string& text, ClassCounts counts) {
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ',')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw UsageError("--counts entries look like SC=1");
    const SampleClass c = parse_sample_class(field.substr(0, eq));
    if (c == SampleClass::kGT) throw UsageError("GT count is fixed at 1");
    try {
      counts[c] = std::stoul(field.substr(eq + 1));
    } catch (const std::exception&) {
      throw UsageError("bad count in '" + field + "'");
    }
  }
  return counts;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ',')) {
    if (!field.empty()) out.push_back(field);
  }
  return out;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out-dir", c.out_dir, "Directory for outputs and manifest.json");
  sub->add_option("--config", c.config_path, "JSON overlay applied before flags");
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--jobs", c.jobs, "Worker threads (0 = all cores)");
}

std::string report_csv(const TrainReport& report) {
  std::ostringstream out;
  out << "epoch,train_loss,valid_loss,valid_accuracy,train_examples,selected\n";
  for (const auto& e : report.epochs) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.valid_loss) << ','
        << format_double(e.valid_accuracy) << ',' << e.train_examples << ','
        << (e.epoch == report.best_epoch ? 1 : 0) << "\n";
  }
  return out.str();
}

EmbeddingTable load_table(const std::string& path) {
  require_file(path, "embedding file");
  return EmbeddingTable::load(path);
}

Corpus load(const std::string& path, std::string_view what) {
  require_file(path, what);
  return load_corpus(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speaker-sensitive response evaluation: training, scoring and experiments"};
  app.require_subcommand(1);
  Common common;

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate a JSONL corpus and write the accepted conversations");
  std::string ingest_input;
  bool no_merge = false;
  ingest_cmd->add_option("--input", ingest_input, "Corpus JSONL")->required();
  ingest_cmd->add_flag("--no-merge", no_merge, "Keep consecutive turns of one speaker separate");
  add_common(ingest_cmd, common);

  // split
  auto* split_cmd = app.add_subcommand("split", "Split a corpus by conversation");
  std::string split_corpus;
  std::string ratios_text = "0.8,0.1,0.1";
  split_cmd->add_option("--corpus", split_corpus, "Corpus JSONL")->required();
  split_cmd->add_option("--ratios", ratios_text, "train,valid,test ratios");
  add_common(split_cmd, common);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus, embeddings and planted responses");
  add_common(synth_cmd, common);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the unreferenced scorer");
  std::string train_path, valid_path, emb_path, variant_name = "ssrem", counts_text, pool_name;
  double lr = 0, margin = 0;
  std::size_t batch = 0, epochs = 0, patience = 0, uniform = 0;
  bool freeze = false;
  train_cmd->add_option("--train", train_path, "Training split JSONL")->required();
  train_cmd->add_option("--valid", valid_path, "Validation split JSONL")->required();
  train_cmd->add_option("--embeddings", emb_path, "Embedding file")->required();
  train_cmd->add_option("--variant", variant_name, "ssrem, rsrem or ruber");
  auto* lr_opt = train_cmd->add_option("--lr", lr, "Learning rate");
  auto* batch_opt = train_cmd->add_option("--batch-size", batch, "Mini-batch size");
  auto* epochs_opt = train_cmd->add_option("--epochs", epochs, "Maximum epochs");
  auto* patience_opt = train_cmd->add_option("--patience", patience, "Early-stopping patience");
  auto* counts_opt = train_cmd->add_option("--counts", counts_text, "Negatives per class, e.g. SC=1,SP=1,SS=1,Rand=1");
  auto* uniform_opt = train_cmd->add_option("--uniform-negatives", uniform, "Negatives for the uniform variants");
  auto* margin_opt = train_cmd->add_option("--margin", margin, "Margin of the ranking loss");
  auto* freeze_opt = train_cmd->add_flag("--freeze-negatives", freeze, "Draw negatives once instead of every epoch");
  auto* pool_opt = train_cmd->add_option("--context-pool", pool_name, "tokens or turns");
  add_common(train_cmd, common);

  // score
  auto* score_cmd = app.add_subcommand("score", "Score candidate responses with every requested metric");
  std::string score_corpus, responses_path, score_emb, ssrem_path, rsrem_path, ruber_path, metrics_text;
  score_cmd->add_option("--corpus", score_corpus, "Corpus holding the contexts")->required();
  score_cmd->add_option("--responses", responses_path, "CSV pair_id,source,human,text")->required();
  score_cmd->add_option("--embeddings", score_emb, "Embedding file")->required();
  score_cmd->add_option("--ssrem", ssrem_path, "SSREM parameter file");
  score_cmd->add_option("--rsrem", rsrem_path, "RSREM parameter file");
  score_cmd->add_option("--ruber", ruber_path, "RUBER-style parameter file");
  score_cmd->add_option("--metrics", metrics_text, "Comma list (default: all available)");
  add_common(score_cmd, common);

  // correlate
  auto* corr_cmd = app.add_subcommand("correlate", "Correlate metric scores with human scores");
  std::string scores_path;
  double jitter = 0.3;
  corr_cmd->add_option("--scores", scores_path, "Scores CSV from `score`")->required();
  corr_cmd->add_option("--jitter", jitter, "Sd of the Gaussian jitter in scatter.csv");
  add_common(corr_cmd, common);

  // identify
  auto* id_cmd = app.add_subcommand("identify", "Mean f per sample class on test pairs");
  std::string id_corpus, id_test, id_emb, id_params, classes_text = "GT,SC,SP,SS,Rand";
  id_cmd->add_option("--corpus", id_corpus, "Corpus the negatives are drawn from")->required();
  id_cmd->add_option("--test", id_test, "Test conversations (default: the whole corpus)");
  id_cmd->add_option("--embeddings", id_emb, "Embedding file")->required();
  id_cmd->add_option("--params", id_params, "Parameter file")->required();
  id_cmd->add_option("--classes", classes_text, "Comma list of classes");
  add_common(id_cmd, common);

  // motivation
  auto* mot_cmd = app.add_subcommand("motivation", "Within-set utterance similarity per sample class");
  std::string mot_corpus, mot_emb, similarity_name = "cosine";
  std::size_t sets_per_speaker = 5, max_set = 64;
  mot_cmd->add_option("--corpus", mot_corpus, "Corpus JSONL")->required();
  mot_cmd->add_option("--embeddings", mot_emb, "Embedding file")->required();
  mot_cmd->add_option("--similarity", similarity_name, "cosine or inv_euclid");
  mot_cmd->add_option("--sets-per-speaker", sets_per_speaker, "Rand sets per speaker");
  mot_cmd->add_option("--max-set-size", max_set, "Subsample larger sets to this size");
  add_common(mot_cmd, common);

  // copy-attack
  auto* copy_cmd = app.add_subcommand("copy-attack", "Score context turns as responses");
  std::string copy_test, copy_emb;
  std::vector<std::string> model_specs;
  copy_cmd->add_option("--test", copy_test, "Test conversations")->required();
  copy_cmd->add_option("--embeddings", copy_emb, "Embedding file")->required();
  copy_cmd->add_option("--model", model_specs, "name=params.json (repeatable)")->required();
  add_common(copy_cmd, common);

  // kappa
  auto* kappa_cmd = app.add_subcommand("kappa", "Fleiss' kappa of a subjects x categories count table");
  std::string ratings_path;
  kappa_cmd->add_option("--ratings", ratings_path, "CSV, one row of category counts per subject")->required();
  add_common(kappa_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const json overlay = read_config(common.config_path);
    const std::size_t jobs = resolve_jobs(common.jobs);
    auto seed_set = [&](CLI::App* sub) { return sub->count("--seed") > 0; };

    if (*ingest_cmd) {
      require_file(ingest_input, "corpus");
      IngestOptions opts;
      opts.merge_consecutive = !no_merge;
      const auto result = ingest(fs::path(ingest_input), opts);
      OutputDir out(common.out_dir, "ingest",
                    {{"input", ingest_input}, {"merge_consecutive", opts.merge_consecutive}});
      write_jsonl(result.conversations, out.path("corpus.jsonl"));
      std::ostringstream report;
      report << "lines_read " << result.lines_read << "\naccepted " << result.conversations.size()
             << "\nrejected " << result.rejected.size() << "\n";
      for (const auto& r : result.rejected) report << "line " << r.line << ": " << r.message << "\n";
      out.write_text("ingest_report.txt", report.str());
      out.finish();
      std::cout << report.str();
    } else if (*split_cmd) {
      const Corpus corpus = load(split_corpus, "corpus");
      std::uint64_t seed = overlay.value("seed", common.seed);
      if (seed_set(split_cmd)) seed = common.seed;
      std::array<double, 3> ratios = parse_ratios(ratios_text);
      if (overlay.contains("ratios") && !split_cmd->count("--ratios")) {
        ratios = overlay["ratios"].get<std::array<double, 3>>();
      }
      const auto parts = split(corpus, ratios, seed);
      OutputDir out(common.out_dir, "split",
                    {{"corpus", split_corpus}, {"ratios", ratios}, {"seed", seed}});
      write_jsonl(parts.train, out.path("train.jsonl"));
      write_jsonl(parts.valid, out.path("valid.jsonl"));
      write_jsonl(parts.test, out.path("test.jsonl"));
      out.finish();
      std::cout << "train " << parts.train.size() << " valid " << parts.valid.size() << " test "
                << parts.test.size() << "\n";
    } else if (*synth_cmd) {
      SynthSpec spec = apply_json(SynthSpec{}, overlay);
      if (seed_set(synth_cmd)) spec.seed = common.seed;
      const auto result = synth_corpus(spec);
      OutputDir out(common.out_dir, "synth", to_json(spec));
      write_jsonl(result.corpus, out.path("corpus.jsonl"));
      write_jsonl(result.splits.train, out.path("train.jsonl"));
      write_jsonl(result.splits.valid, out.path("valid.jsonl"));
      write_jsonl(result.splits.test, out.path("test.jsonl"));
      result.table.save(out.path("embeddings.txt"));
      auto responses = out.open("responses.csv");
      write_responses_csv(result.responses, responses);
      responses.close();
      out.finish();
      std::cout << "conversations " << result.corpus.size() << " speakers " << spec.n_speakers()
                << " vocabulary " << result.table.size() << " responses " << result.responses.size()
                << "\n";
    } else if (*train_cmd) {
      const Corpus train_corpus = load(train_path, "training corpus");
      const Corpus valid_corpus = load(valid_path, "validation corpus");
      const EmbeddingTable table = load_table(emb_path);
      const ModelVariant variant =
          parse_model_variant(train_cmd->count("--variant") ? variant_name
                                                            : overlay.value("variant", variant_name));
      ModelConfig config = apply_json(default_config(variant), overlay);
      config.variant = variant;
      if (seed_set(train_cmd)) config.seed = common.seed;
      if (lr_opt->count()) config.optimizer.learning_rate = lr;
      if (batch_opt->count()) config.optimizer.batch_size = batch;
      if (epochs_opt->count()) config.optimizer.max_epochs = epochs;
      if (patience_opt->count()) config.optimizer.patience = patience;
      if (counts_opt->count()) config.counts = parse_counts(counts_text, config.counts);
      if (uniform_opt->count()) config.uniform_negatives = uniform;
      if (margin_opt->count()) config.margin = margin;
      if (freeze_opt->count()) config.freeze_negatives = freeze;
      if (pool_opt->count()) config.context_pool = parse_context_pool(pool_name);

      json echo = {{"train", train_path}, {"valid", valid_path}, {"embeddings", emb_path},
                   {"model", to_json(config)}};
      OutputDir out(common.out_dir, "train", echo);
      const auto result = train(train_corpus, valid_corpus, table, config, jobs);
      save_params(result.params, out.path("params.json"));
      out.write_text("train_report.csv", report_csv(result.report));
      out.finish();
      const auto& best = result.report.epochs[result.report.best_epoch - 1];
      std::cout << "epochs " << result.report.epochs.size() << " best " << result.report.best_epoch
                << " valid_loss " << format_double(best.valid_loss) << " valid_accuracy "
                << format_double(best.valid_accuracy) << "\n";
    } else if (*score_cmd) {
      const Corpus corpus = load(score_corpus, "corpus");
      require_file(responses_path, "responses file");
      const EmbeddingTable table = load_table(score_emb);
      ScoreModels models;
      std::vector<std::string> metrics{"bleu", "rouge_l", "emb"};
      auto load_model = [&](const std::string& path, std::optional<ModelParams>& slot, const char* name) {
        if (path.empty()) return;
        require_file(path, std::string(name) + " parameter file");
        slot = load_params(path, table.sha256());
        metrics.emplace_back(name);
      };
      load_model(ruber_path, models.ruber, "ruber");
      load_model(rsrem_path, models.rsrem, "rsrem");
      load_model(ssrem_path, models.ssrem, "ssrem");
      if (!metrics_text.empty()) metrics = split_list(metrics_text);
      std::ifstream in(responses_path);
      auto records = read_responses_csv(in);
      OutputDir out(common.out_dir, "score",
                    {{"corpus", score_corpus}, {"responses", responses_path}, {"embeddings", score_emb},
                     {"ssrem", ssrem_path}, {"rsrem", rsrem_path}, {"ruber", ruber_path},
                     {"metrics", metrics}});
      records = score_all(corpus, std::move(records), table, models, metrics, jobs);
      auto csv = out.open("scores.csv");
      write_scores_csv(records, csv);
      csv.close();
      out.finish();
      std::cout << "scored " << records.size() << " responses\n";
    } else if (*corr_cmd) {
      require_file(scores_path, "scores file");
      std::ifstream in(scores_path);
      const auto records = read_scores_csv(in);
      const auto rows = correlate(records);
      OutputDir out(common.out_dir, "correlate",
                    {{"scores", scores_path}, {"jitter_sd", jitter}, {"seed", common.seed}});
      auto csv = out.open("correlation.csv");
      write_csv(rows, csv);
      csv.close();
      std::vector<ScatterRow> scatter;
      for (const auto& r : rows) {
        auto part = scatter_emit(records, r.metric, jitter, common.seed);
        scatter.insert(scatter.end(), part.begin(), part.end());
      }
      auto sc = out.open("scatter.csv");
      write_csv(scatter, sc);
      sc.close();
      out.finish();
      write_csv(rows, std::cout);
    } else if (*id_cmd) {
      const Corpus corpus = load(id_corpus, "corpus");
      const Corpus test = id_test.empty() ? corpus : load(id_test, "test corpus");
      const EmbeddingTable table = load_table(id_emb);
      require_file(id_params, "parameter file");
      const auto params = load_params(id_params, table.sha256());
      const auto classes = parse_class_list(classes_text);
      OutputDir out(common.out_dir, "identify",
                    {{"corpus", id_corpus}, {"test", id_test}, {"embeddings", id_emb},
                     {"params", id_params}, {"classes", classes_text}, {"seed", common.seed}});
      const auto report = identify(corpus, test, table, params, classes, common.seed, jobs);
      auto summary = out.open("identify_summary.csv");
      write_summary_csv(report, summary);
      summary.close();
      auto rows = out.open("identify_rows.csv");
      write_rows_csv(report, rows);
      rows.close();
      out.finish();
      write_summary_csv(report, std::cout);
      std::cout << "pairs " << report.pairs_used << " skipped " << report.pairs_skipped
                << " accuracy " << format_double(report.accuracy) << "\n";
    } else if (*mot_cmd) {
      const Corpus corpus = load(mot_corpus, "corpus");
      const EmbeddingTable table = load_table(mot_emb);
      const Similarity sim = parse_similarity(similarity_name);
      OutputDir out(common.out_dir, "motivation",
                    {{"corpus", mot_corpus}, {"embeddings", mot_emb}, {"similarity", similarity_name},
                     {"sets_per_speaker", sets_per_speaker}, {"max_set_size", max_set},
                     {"seed", common.seed}});
      const auto report = motivation(corpus, table, sim, sets_per_speaker, common.seed, max_set, jobs);
      auto csv = out.open("motivation.csv");
      write_csv(report, csv);
      csv.close();
      out.finish();
      write_csv(report, std::cout);
    } else if (*copy_cmd) {
      const Corpus test = load(copy_test, "test corpus");
      const EmbeddingTable table = load_table(copy_emb);
      std::vector<std::pair<std::string, ModelParams>> models;
      for (const auto& spec : model_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--model takes name=params.json");
        const std::string path = spec.substr(eq + 1);
        require_file(path, "parameter file");
        models.emplace_back(spec.substr(0, eq), load_params(path, table.sha256()));
      }
      OutputDir out(common.out_dir, "copy-attack",
                    {{"test", copy_test}, {"embeddings", copy_emb}, {"models", model_specs}});
      const auto rows = copy_attack(test, table, models, jobs);
      auto csv = out.open("copy_attack.csv");
      write_csv(rows, csv);
      csv.close();
      out.finish();
      write_csv(rows, std::cout);
    } else if (*kappa_cmd) {
      require_file(ratings_path, "ratings file");
      std::ifstream in(ratings_path);
      std::vector<std::vector<int>> ratings;
      std::string line;
      for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<int> row;
        for (const auto& f : csv_split(line)) {
          try {
            row.push_back(std::stoi(f));
          } catch (const std::exception&) {
            if (ratings.empty() && row.empty()) break;  // header
            throw DataError(ratings_path + ":" + std::to_string(n) + ": bad count '" + f + "'");
          }
        }
        if (!row.empty()) ratings.push_back(std::move(row));
      }
      double kappa = 0.0;
      try {
        kappa = fleiss_kappa(ratings);
      } catch (const StatisticError& e) {
        throw DataError(std::string("kappa: ") + e.what());
      }
      OutputDir out(common.out_dir, "kappa", {{"ratings", ratings_path}});
      out.write_text("kappa.txt", "subjects " + std::to_string(ratings.size()) + "\nkappa " +
                                      format_double(kappa) + "\n");
      out.finish();
      std::cout << "kappa " << format_double(kappa) << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
