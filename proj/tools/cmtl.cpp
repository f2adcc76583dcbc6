// Command-line front end: synthetic data generation, relatedness inference,
// training, evaluation and multi-seed suites.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>

#include "cmtl/cmtl.hpp"

namespace fs = std::filesystem;
using namespace cmtl;

namespace {

void gen_synth(const std::string& config_path, const std::string& out_dir) {
  const auto file = ConfigFile::load(config_path);
  file.reject_unknown(synth_config_keys(""));
  const SynthConfig cfg = synth_config_from(file);
  const auto splits = gen_synthetic(cfg);
  const auto out = fs::path(out_dir);
  text::write_file((out / "schema.txt").string(), write_schema(cfg.schema()));
  text::write_file((out / "true_relatedness.rel").string(), write_relatedness(cfg.true_relatedness));
  const std::pair<const char*, const Dataset*> parts[] = {{"train_cls_only.csv", &splits.train_cls_only},
                                                          {"train_att_only.csv", &splits.train_att_only},
                                                          {"train_joint.csv", &splits.train_joint},
                                                          {"test.csv", &splits.test}};
  for (const auto& [name, data] : parts) {
    if (!data->empty()) text::write_file((out / name).string(), write_dataset(*data));
  }
  std::cout << "wrote " << splits.train_cls_only.size() << " class-only, " << splits.train_att_only.size()
            << " attribute-only, " << splits.train_joint.size() << " joint and " << splits.test.size()
            << " test samples to " << out_dir << '\n';
}

void infer_rel(const std::string& data_path, const std::string& schema_path, const std::string& out_path) {
  const Schema schema = parse_schema(text::read_file(schema_path));
  const Dataset data = parse_dataset(text::read_file(data_path), schema);
  text::write_file(out_path, write_relatedness(infer_relatedness(data)));
}

void train_cmd(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = experiment_config_from(ConfigFile::load(config_path));
  const ExperimentData data = load_experiment_data(cfg.data);
  std::optional<Coupling> coupling;
  const auto w = cfg.effective_weights();
  if (w.dm > 0.0 || w.sca > 0.0) coupling = resolve_coupling(cfg.relatedness, data);
  auto result = train(cfg, data, coupling);
  const auto out = fs::path(out_dir);
  const auto ckpt_path = (out / "checkpoint.txt").string();
  result.log.checkpoint = ckpt_path;
  text::write_file(ckpt_path, write_checkpoint(result.params, data.schema.class_names, data.schema.attribute_names));
  text::write_file((out / "runlog.csv").string(), result.log.to_csv());
  const std::string run_id = std::string(to_string(cfg.mode)) + "_seed" + std::to_string(cfg.seed);
  text::write_file((out / "metrics.csv").string(),
                   metrics_csv_header() + metrics_csv_rows(run_id, to_string(cfg.mode), cfg.seed, result.final_metrics));
  std::cout << metrics_csv_header() << metrics_csv_rows(run_id, to_string(cfg.mode), cfg.seed, result.final_metrics);
}

void eval_cmd(const std::string& ckpt_path, const std::string& data_path, const std::string& schema_path,
              const std::string& dump_path) {
  const Checkpoint ckpt = read_checkpoint(text::read_file(ckpt_path));
  Schema schema;
  if (!schema_path.empty()) {
    schema = parse_schema(text::read_file(schema_path));
  } else {
    if (ckpt.class_names.empty() || ckpt.attribute_names.empty()) {
      throw Error(ErrorKind::Config, "checkpoint carries no names; pass --schema");
    }
    schema = {ckpt.class_names, ckpt.attribute_names, ckpt.params.config.input_dim};
  }
  const Dataset data = parse_dataset(text::read_file(data_path), schema);
  const auto metrics = evaluate(ckpt.params, data);
  if (!dump_path.empty()) text::write_file(dump_path, prediction_dump(ckpt.params, data));
  std::cout << metrics_csv_header() << metrics_csv_rows(fs::path(ckpt_path).stem().string(), "eval", 0, metrics);
}

void suite_cmd(const std::string& config_path, const std::string& modes, std::size_t seeds,
               const std::string& out_dir) {
  const auto cfg = experiment_config_from(ConfigFile::load(config_path));
  const auto result = run_suite(cfg, parse_suite_modes(modes), seeds);
  write_suite_outputs(result, out_dir);
  std::cout << suite_table_text(result);
  for (const auto& t : result.transfers) {
    if (t.seed) continue;
    for (const auto& [task, tt] : t.report.tasks) {
      if (tt.negative_transfer) {
        std::cout << "negative transfer: " << t.mode << " on " << to_string(task) << " (" << tt.metric << ' '
                  << text::format_fixed(tt.mt_score) << " < " << text::format_fixed(tt.st_score) << ")\n";
      }
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled multi-task learning of classes and binary attributes"};
  app.require_subcommand(1);

  std::string config, out, data, schema, checkpoint, dump, modes = "st_cls,st_att,mt_nc,mt_c";
  std::size_t seeds = 5;

  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic partially annotated dataset");
  gen->add_option("--config", config, "Synthetic config file")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* infer = app.add_subcommand("infer-rel", "Infer class/attribute relatedness from co-annotated data");
  infer->add_option("--data", data, "Dataset CSV")->required();
  infer->add_option("--schema", schema, "Schema file")->required();
  infer->add_option("--out", out, "Output .rel file")->required();

  auto* train = app.add_subcommand("train", "Train one experiment");
  train->add_option("--config", config, "Experiment config file")->required();
  train->add_option("--out", out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", data, "Dataset CSV")->required();
  eval->add_option("--schema", schema, "Schema file (defaults to the names stored in the checkpoint)");
  eval->add_option("--dump", dump, "Write per-sample probabilities to this CSV");

  auto* suite = app.add_subcommand("suite", "Run several modes over consecutive seeds");
  suite->add_option("--config", config, "Experiment config file")->required();
  suite->add_option("--modes", modes, "Comma-separated modes");
  suite->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  suite->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen) gen_synth(config, out);
    if (*infer) infer_rel(data, schema, out);
    if (*train) train_cmd(config, out);
    if (*eval) eval_cmd(checkpoint, data, schema, dump);
    if (*suite) suite_cmd(config, modes, seeds, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
