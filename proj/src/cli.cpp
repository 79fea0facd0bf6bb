#include "sram/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "sram/evaluation.hpp"
#include "sram/parallel.hpp"

namespace sram {

namespace {

constexpr double kGradcheckTolerance = 1e-4;

struct ModelOptions {
  Index hidden = 64;
  Index stages = 5;
  std::string position_head = "linear";
};

struct TrainOptions {
  Index epochs = 30;
  Index recognition_epochs = 30;
  double learning_rate = 0.01;
  Index batch_size = 32;
  std::uint64_t seed = 7;
};

void add_model_options(CLI::App* cmd, ModelOptions& m) {
  cmd->add_option("--hidden", m.hidden, "hidden width")->check(CLI::PositiveNumber);
  cmd->add_option("--stages", m.stages, "unrolling stages K")->check(CLI::PositiveNumber);
  cmd->add_option("--position-head", m.position_head, "linear or relu")->check(CLI::IsMember({"linear", "relu"}));
}

void add_train_options(CLI::App* cmd, TrainOptions& t) {
  cmd->add_option("--epochs", t.epochs, "generator epochs")->check(CLI::NonNegativeNumber);
  cmd->add_option("--rec-epochs", t.recognition_epochs, "recognition model epochs")->check(CLI::NonNegativeNumber);
  cmd->add_option("--lr", t.learning_rate, "learning rate")->check(CLI::PositiveNumber);
  cmd->add_option("--batch", t.batch_size, "batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", t.seed, "seed");
}

ModelConfig model_config(const ModelOptions& m, const Dataset& data) {
  ModelConfig c;
  c.feat_dim = data.feat_dim;
  c.classes = data.num_classes();
  c.hidden = m.hidden;
  c.stages = m.stages;
  c.position_head = position_head_from_string(m.position_head);
  return c;
}

TrainConfig train_config(const TrainOptions& t) {
  TrainConfig c;
  c.epochs = t.epochs;
  c.recognition_epochs = t.recognition_epochs;
  c.learning_rate = t.learning_rate;
  c.batch_size = t.batch_size;
  c.seed = t.seed;
  c.threads = thread_limit();
  return c;
}

// Writes `body` to `path`, or to `out` when the path is empty.
template <typename Fn>
void emit(const std::string& path, std::ostream& out, Fn&& body) {
  if (path.empty()) {
    body(out);
    return;
  }
  std::ofstream file(path);
  if (!file) throw DataError("cannot open " + path + " for writing");
  body(file);
  if (!file) throw DataError("failed writing " + path);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sequential relational anticipation for group activity prediction"};
  app.require_subcommand(1);

  // gen
  DatasetSpec spec;
  Index class_count = 6;
  std::string split = "train";
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--classes", class_count, "number of activity classes")->check(CLI::Range(1, 6));
  gen->add_option("--agents", spec.agents)->check(CLI::PositiveNumber);
  gen->add_option("--frames", spec.frames)->check(CLI::Range(2, 100000));
  gen->add_option("--feat-dim", spec.feat_dim)->check(CLI::PositiveNumber);
  gen->add_option("--clips", spec.n_clips)->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", spec.seed);
  gen->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));
  gen->add_option("--ambiguity", spec.ambiguity, "fraction of leading mill frames")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--arena", spec.arena)->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "output path (stdout if omitted)");

  // train
  ModelOptions model_opts;
  TrainOptions train_opts;
  std::string train_path, test_path, model_path, history_path;
  auto* train = app.add_subcommand("train", "train a model; writes the epoch history as CSV");
  train->add_option("--train", train_path, "training dataset")->required();
  train->add_option("--test", test_path, "test dataset for the accuracy history");
  train->add_option("--model", model_path, "where to save the model")->required();
  train->add_option("--out", history_path, "history CSV (stdout if omitted)");
  Index eval_every = 1;
  train->add_option("--eval-every", eval_every, "epochs between test sweeps (0: last epoch only)")
      ->check(CLI::NonNegativeNumber);
  add_model_options(train, model_opts);
  add_train_options(train, train_opts);

  // eval
  std::string eval_model, eval_data, eval_out;
  std::vector<double> eval_ratios = default_ratios();
  auto* eval = app.add_subcommand("eval", "accuracy per observation ratio");
  eval->add_option("--model", eval_model)->required();
  eval->add_option("--data", eval_data)->required();
  eval->add_option("--ratios", eval_ratios)->delimiter(',');
  eval->add_option("--out", eval_out);

  // ablate
  std::string ablate_train, ablate_test, ablate_out;
  std::string variants = "full,no-reg,no-gan,no-rec,K=1,K=2,K=5,K=10";
  ModelOptions ablate_model;
  TrainOptions ablate_opts;
  auto* abl = app.add_subcommand("ablate", "train and evaluate model variants");
  abl->add_option("--train", ablate_train)->required();
  abl->add_option("--test", ablate_test)->required();
  abl->add_option("--variants", variants, "comma-separated: full, no-reg, no-gan, no-rec, K=<n>");
  abl->add_option("--out", ablate_out);
  add_model_options(abl, ablate_model);
  add_train_options(abl, ablate_opts);

  // posmetrics
  std::string pos_model, pos_data, pos_out, pos_classes;
  double pos_ratio = 0.3;
  auto* pos = app.add_subcommand("posmetrics", "FDE/ADE of the model and the persistence baseline");
  pos->add_option("--model", pos_model)->required();
  pos->add_option("--data", pos_data)->required();
  pos->add_option("--ratio", pos_ratio);
  pos->add_option("--classes", pos_classes, "comma-separated class filter");
  pos->add_option("--out", pos_out);

  // gradcheck
  std::uint64_t gc_seed = 3;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the training objective");
  gc->add_option("--seed", gc_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;
    err << app.help();
    return 1;
  }

  try {
    if (*gen) {
      spec.classes.assign(kActivityNames.begin(), kActivityNames.begin() + class_count);
      spec.split = split == "test" ? Split::kTest : Split::kTrain;
      const Dataset data = generate_dataset(spec);
      if (gen_out.empty())
        out << dataset_to_json(data) << "\n";
      else
        write_dataset(data, gen_out);
    } else if (*train) {
      const Dataset train_data = load_dataset(train_path);
      Dataset test_data;
      if (!test_path.empty()) test_data = load_dataset(test_path);
      TrainConfig tc = train_config(train_opts);
      tc.eval_every = eval_every;
      SramModel model = init_model(model_config(model_opts, train_data), tc.seed);
      train_recognition(model, train_data, tc);
      const History h = fit(model, train_data, test_path.empty() ? nullptr : &test_data, tc);
      save_model(model, model_path);
      emit(history_path, out, [&](std::ostream& o) { write_history_csv(o, h); });
    } else if (*eval) {
      const SramModel model = load_model(eval_model);
      const Dataset data = load_dataset(eval_data);
      const RatioSweepResult r = evaluate(model, data, eval_ratios, thread_limit());
      emit(eval_out, out, [&](std::ostream& o) { write_sweep_csv(o, r); });
      err << "mean accuracy " << std::fixed << std::setprecision(4) << r.mean << "\n";
    } else if (*abl) {
      const Dataset train_data = load_dataset(ablate_train);
      const Dataset test_data = load_dataset(ablate_test);
      const auto rows = ablate(train_data, test_data, split_list(variants), model_config(ablate_model, train_data),
                               train_config(ablate_opts));
      emit(ablate_out, out, [&](std::ostream& o) { write_ablation_csv(o, rows); });
      err << "mean column: accuracy averaged over ratios 0.1..1.0\n";
    } else if (*pos) {
      const SramModel model = load_model(pos_model);
      const Dataset data = load_dataset(pos_data);
      const auto classes = split_list(pos_classes);
      for (const auto& c : classes) activity_index(c);
      const std::vector<std::pair<std::string, PositionMetrics>> rows = {
          {"sram", position_metrics(model, data, pos_ratio, classes)},
          {"persistence", persistence_metrics(data, pos_ratio, model.config.stages, classes)},
      };
      emit(pos_out, out, [&](std::ostream& o) { write_position_csv(o, rows); });
    } else if (*gc) {
      const double e = phase_b_gradcheck(gc_seed);
      out << "max_relative_error " << std::scientific << std::setprecision(3) << e << std::defaultfloat << "\n";
      if (!(e < kGradcheckTolerance)) return 3;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace sram
