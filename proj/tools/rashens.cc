/*
 * Copyright 2026 The Rashens Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// rashens: command line front end for the Rashomon ensemble pipeline.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rashens/common.h"
#include "rashens/pipeline.h"
#include "rashens/session.h"

namespace fs = std::filesystem;
using rashens::Error;

namespace {

std::map<std::string, std::string> ParseOverrides(const std::vector<std::string>& items) {
  std::map<std::string, std::string> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error("config", "--set expects key=value, got '" + item + "'");
    }
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

rashens::RunConfig ConfigFromDir(const fs::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) throw Error("load", "no config.json in " + dir.string());
  rashens::RunConfig c = rashens::RunConfigFromJson(nlohmann::json::parse(in), dir);
  c.output_dir = dir;
  return c;
}

void WriteJsonFile(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("write", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<double> ParseLevels(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string part = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw Error("config", "invalid level '" + part + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

int Run(const std::string& config_path, const std::map<std::string, std::string>& overrides,
        const std::string& output) {
  rashens::RunConfig config = rashens::LoadRunConfig(config_path, overrides);
  if (!output.empty()) config.output_dir = fs::absolute(output);
  if (config.output_dir.empty()) throw Error("config", "no output directory (set output_dir or --out)");
  // Remove a stale manifest first so a failed run never leaves one behind.
  fs::remove(config.output_dir / "manifest.json");
  const auto result = rashens::RunPipeline(config);
  const auto& m = result.manifest;
  std::cout << "rashomon ratio " << m["rashomon"]["ratio"].get<double>() << " ("
            << m["rashomon"]["n_members"] << "/" << m["rashomon"]["n_sampled"] << ")\n"
            << "clusters k=" << m["clusters"]["k"] << " silhouette "
            << m["clusters"]["silhouette"].get<double>() << "\n"
            << "ensemble test " << m["ensemble"]["test"].dump() << "\n"
            << "manifest " << (config.output_dir / "manifest.json").string() << "\n";
  return fs::exists(config.output_dir / "manifest.json") ? 0 : 1;
}

int Ablate(const fs::path& dir, const std::string& scenario, int repeats, int n_models) {
  rashens::LoadedRun run = rashens::LoadRun(dir);
  if (n_models > 0) run.config.ablation_n_models = n_models;
  const auto report = rashens::RunAblation(run, rashens::ParseAblationScenario(scenario), repeats);
  const fs::path path = dir / "ablation" / ("scenario_" + rashens::AblationScenarioName(report.scenario) + ".json");
  WriteJsonFile(path, rashens::ToJson(report));
  std::cout << "scenario " << rashens::AblationScenarioName(report.scenario) << ": jaccard "
            << report.jaccard_mean << " +/- " << report.jaccard_std << ", shap cosine "
            << report.cosine_mean << " +/- " << report.cosine_std << "\n"
            << "report " << path.string() << "\n";
  return 0;
}

int Drift(const fs::path& dir, const std::string& levels, const std::string& kind, int repeats) {
  const rashens::LoadedRun run = rashens::LoadRun(dir);
  const auto perturbation = rashens::ParsePerturbationKind(kind);
  const auto report = rashens::DriftExperiment(
      run.ensemble, run.data.test, ParseLevels(levels), perturbation,
      rashens::DeriveSeed(run.config.seed, perturbation == rashens::PerturbationKind::kShuffle
                                              ? rashens::kShuffleSeed
                                              : rashens::kDriftSeed),
      repeats > 0 ? repeats : run.config.drift_repeats);
  WriteJsonFile(dir / "drift" / (kind + ".json"), rashens::ToJson(report));
  rashens::WriteDriftCsv(dir / "drift" / (kind + ".csv"), report);
  rashens::WriteDriftGnuplot(dir / "drift" / (kind + ".dat"), report);
  std::cout << "level,loss_mean,jsd_mean,agreement_mean\n";
  for (const auto& row : report.rows) {
    std::cout << row.level << "," << row.loss_mean << "," << row.jsd_mean << "," << row.agreement_mean << "\n";
  }
  return 0;
}

int Report(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("report", "no manifest.json in " + dir.string());
  const auto m = nlohmann::json::parse(in);
  std::cout << m["version"].get<std::string>() << "\n"
            << "dataset      " << m["config"]["data"]["path"].get<std::string>() << "\n"
            << "rashomon     ratio " << m["rashomon"]["ratio"] << ", members " << m["rashomon"]["n_members"]
            << " of " << m["rashomon"]["n_sampled"] << ", ref loss " << m["rashomon"]["ref_loss"] << "\n"
            << "clusters     k " << m["clusters"]["k"] << ", silhouette " << m["clusters"]["silhouette"] << "\n"
            << "ensemble     " << m["ensemble"]["combiner"].get<std::string>() << ", validation "
            << m["ensemble"]["validation"].dump() << ", test " << m["ensemble"]["test"].dump() << "\n"
            << "reference    test " << m["comparison"]["reference_tree_outer_train"]["test"].dump() << "\n";
  std::cout << "constituents\n";
  for (const auto& c : m["constituents"]) {
    std::cout << "  id " << c["id"] << " cluster " << c["cluster"] << " subset " << c["subset"].dump() << "\n";
  }
  if (m.contains("timings")) std::cout << "timings      " << m["timings"].dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rashomon ensembles: sample, filter, cluster, search and combine decision trees"};
  app.set_version_flag("--version", rashens::kVersion);
  app.require_subcommand(1);

  std::string config_path, output;
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "Run the full pipeline from a JSON config");
  run->add_option("-c,--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  run->add_option("--set", overrides, "Override a config field, e.g. --set sampling.n_models=500");
  run->add_option("-o,--out", output, "Output directory (overrides output_dir)");

  std::string dir = "out";
  std::string scenario;
  int repeats = 30, ablation_models = 0;
  auto* ablate = app.add_subcommand("ablate", "Similarity of alternative ensembles to a completed run");
  ablate->add_option("-s,--scenario", scenario, "I, II or III")->required();
  ablate->add_option("-n,--repeats", repeats, "Number of repeats")->check(CLI::PositiveNumber);
  ablate->add_option("-d,--dir", dir, "Run directory")->capture_default_str();
  ablate->add_option("--n-models", ablation_models, "Candidates per scenario I re-run");

  std::string levels = "0,0.4,0.8,1.2,1.6,2.0", kind = "gaussian";
  int drift_repeats = 0;
  auto* drift = app.add_subcommand("drift", "Drift experiment on the test split of a completed run");
  drift->add_option("--levels", levels, "Comma separated perturbation levels")->capture_default_str();
  drift->add_option("--kind", kind, "gaussian or shuffle")->capture_default_str();
  drift->add_option("-d,--dir", dir, "Run directory")->capture_default_str();
  drift->add_option("-r,--repeats", drift_repeats, "Repeats per level (default from config)");

  int port = 8080;
  std::string host = "127.0.0.1", static_dir;
  bool fresh = false;
  auto* serve = app.add_subcommand("serve", "Serve the explorer API for a completed run");
  serve->add_option("-d,--dir", dir, "Run directory")->capture_default_str();
  serve->add_option("-p,--port", port, "Port")->capture_default_str();
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--static", static_dir, "Directory with a built explorer UI");
  serve->add_flag("--fresh", fresh, "Discard the saved veto session");

  auto* report = app.add_subcommand("report", "Summarize a completed run");
  report->add_option("-d,--dir", dir, "Run directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return Run(config_path, ParseOverrides(overrides), output);
    if (*ablate) return Ablate(dir, scenario, repeats, ablation_models);
    if (*drift) return Drift(dir, levels, kind, drift_repeats);
    if (*serve) return rashens::Serve(dir, host, port, fresh, static_dir);
    if (*report) return Report(dir);
  } catch (const Error& e) {
    std::cerr << "rashens: " << e.stage() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "rashens: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
