// Command-line front end: synthetic data, training, evaluation, inference
// and gradient verification.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "slicemem/errors.hpp"
#include "slicemem/raster.hpp"
#include "slicemem/synth.hpp"
#include "slicemem/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

int run_gen_data(const std::string& out, std::size_t sequences, std::size_t slices,
                 std::uint64_t seed, double corrupt_prob) {
  slicemem::SynthConfig cfg;
  cfg.num_sequences = sequences;
  cfg.slices_per_sequence = slices;
  cfg.seed = seed;
  cfg.corrupt_prob = corrupt_prob;
  slicemem::generate_dataset(cfg, out);
  std::cout << json{{"sequences", sequences}, {"slices", slices}, {"out", out}}.dump() << "\n";
  return 0;
}

int run_train(const std::string& data, const std::string& config_path, const std::string& out,
              std::optional<std::size_t> steps, std::optional<std::uint64_t> seed) {
  slicemem::TrainConfig cfg = slicemem::load_train_config(config_path);
  if (steps) cfg.steps = *steps;
  if (seed) cfg.seed = *seed;
  cfg.validate();
  const auto result = slicemem::train_to_files(cfg, data, out);
  const auto& last = result.trace.back();
  std::cout << json{{"steps", cfg.steps}, {"final_loss", last.loss}, {"lambda", last.lambda},
                    {"checkpoint", out}}
                   .dump()
            << "\n";
  return 0;
}

int run_eval(const std::string& data, const std::string& ckpt, const std::string& report_path) {
  const auto params = slicemem::load_model(ckpt);
  auto report = slicemem::evaluate(params, slicemem::load_dataset(data));
  json doc = report.to_json();
  doc["checkpoint"] = ckpt;
  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw slicemem::IoError("cannot write report " + report_path);
  out << doc.dump(2) << "\n";
  std::cout << json{{"count", report.overall.count},
                    {"mean", report.overall.mean},
                    {"sd", report.overall.sd}}
                   .dump()
            << "\n";
  return 0;
}

int run_infer(const std::string& ckpt, const std::string& sequence_dir, const std::string& out) {
  const auto params = slicemem::load_model(ckpt);
  const auto seq = slicemem::load_sequence(sequence_dir);
  const auto masks = slicemem::infer_masks(params, seq);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw slicemem::IoError("cannot create " + out + ": " + ec.message());
  for (std::size_t t = 0; t < masks.size(); ++t) {
    slicemem::write_raster(fs::path(out) / ("pred_" + std::to_string(t) + ".psr"), masks[t],
                           slicemem::RasterDtype::kU8);
  }
  std::cout << json{{"sequence_id", seq.sequence_id}, {"slices", masks.size()}, {"out", out}}.dump()
            << "\n";
  return 0;
}

int run_grad_check(std::uint64_t seed) {
  const auto report = slicemem::grad_check(seed);
  std::cout << report.to_json().dump(2) << "\n";
  if (!report.passed) {
    print_error("grad-check", "gradient check exceeded tolerance");
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-slice memory segmentation toolkit"};
  app.require_subcommand(1);

  std::string gen_out;
  std::size_t gen_sequences = 4, gen_slices = 6;
  std::uint64_t gen_seed = 1;
  double gen_corrupt = 0.0;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic serial-section dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--sequences", gen_sequences, "Number of sequences");
  gen->add_option("--slices", gen_slices, "Slices per sequence");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--corrupt-prob", gen_corrupt, "Probability a slice is corrupted")
      ->check(CLI::Range(0.0, 1.0));

  std::string train_data, train_config, train_out;
  std::optional<std::size_t> train_steps;
  std::optional<std::uint64_t> train_seed;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--config", train_config, "Training config (JSON)")->required();
  train->add_option("--out", train_out, "Output checkpoint")->required();
  train->add_option("--steps", train_steps, "Override optimizer steps");
  train->add_option("--seed", train_seed, "Override seed");

  std::string eval_data, eval_ckpt, eval_report;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  eval->add_option("--report", eval_report, "Report output (JSON)")->required();

  std::string infer_ckpt, infer_seq, infer_out;
  auto* infer = app.add_subcommand("infer", "Predict masks for one sequence");
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint")->required();
  infer->add_option("--sequence", infer_seq, "Sequence directory")->required();
  infer->add_option("--out", infer_out, "Output directory")->required();

  std::uint64_t gc_seed = 42;
  auto* gc = app.add_subcommand("grad-check", "Compare backprop gradients with finite differences");
  gc->add_option("--seed", gc_seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*gen) return run_gen_data(gen_out, gen_sequences, gen_slices, gen_seed, gen_corrupt);
    if (*train) return run_train(train_data, train_config, train_out, train_steps, train_seed);
    if (*eval) return run_eval(eval_data, eval_ckpt, eval_report);
    if (*infer) return run_infer(infer_ckpt, infer_seq, infer_out);
    if (*gc) return run_grad_check(gc_seed);
  } catch (const slicemem::Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
