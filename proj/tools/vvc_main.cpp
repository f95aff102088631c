#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "experiment_config.hpp"
#include "svg_plot.hpp"
#include "vvc/parallel.hpp"
#include "vvc/verify.hpp"

namespace fs = std::filesystem;
using namespace vvc;
using vvc::cli::ExperimentConfig;

namespace {

struct CommonArgs {
  std::string config_path;
  int workers = 0;            // 0: all cores
  std::int64_t seed = -1;     // -1: keep the config's seeds
};

ExperimentConfig load_cfg(const CommonArgs& args) {
  if (args.config_path.empty()) throw StructureError("--config is required");
  return vvc::cli::load_experiment_config(args.config_path);
}

std::vector<vvc::cli::Series> trajectory_series(const DayReport& rep, std::span<const int> buses) {
  std::vector<vvc::cli::Series> out;
  for (int b : buses) {
    vvc::cli::Series s;
    s.name = "bus " + std::to_string(b);
    for (int k = 0; k < rep.terminal_v.rows(); ++k) s.y.push_back(rep.terminal_v(k, b - 1));
    out.push_back(std::move(s));
  }
  return out;
}

void write_trajectory_csv(const DayReport& rep, std::span<const int> buses,
                          const std::string& path) {
  std::ostringstream out;
  out << "point,label";
  for (int b : buses) out << ",v_bus" << b;
  out << "\n";
  for (std::size_t k = 0; k < rep.points.size(); ++k) {
    out << k << "," << rep.points[k].label;
    for (int b : buses) out << "," << fmt_double(rep.terminal_v(k, b - 1));
    out << "\n";
  }
  write_file(path, out.str());
}

std::vector<int> parse_bus_list(const std::string& text, int n) {
  std::vector<int> buses;
  for (const auto& tok : split(text, ',')) {
    const int b = static_cast<int>(parse_long(trim(tok), "--plot-buses"));
    if (b >= 1 && b <= n) buses.push_back(b);
  }
  if (buses.empty()) throw StructureError("--plot-buses selects no valid bus");
  return buses;
}

int cmd_build_net(const std::string& path) {
  const auto net = load_network(path);
  const auto mat = build_matrices(net);
  std::cout << path << ": " << net.bus_count << " buses (" << net.n()
            << " + substation), " << net.controllable.size() << " controllable\n"
            << "  z_base = " << fmt_double(net.z_base()) << " ohm (" << net.base_kv
            << " kV, " << net.base_mva << " MVA)\n"
            << "  |X_cc| = " << fmt_double(mat.x_norm) << " p.u.\n";
  return 0;
}

int cmd_gen_profiles(const CommonArgs& args, int days_override, const std::string& out) {
  auto cfg = load_cfg(args);
  const auto net = load_network(cfg.network_path);
  const int days = days_override > 0 ? days_override : cfg.profile_days;
  const std::uint64_t seed = args.seed >= 0 ? args.seed : cfg.profile_seed;
  const auto profiles = synth_profiles(net, days, seed, cfg.profiles);
  save_scenarios(profiles, net, out);
  std::cout << "wrote " << profiles.size() << " scenario points (" << days << " days) to "
            << out << "\n";
  return 0;
}

int cmd_gen_data(const CommonArgs& args, const std::string& profiles_path,
                 const std::string& out) {
  auto cfg = load_cfg(args);
  const auto net = load_network(cfg.network_path);
  const auto mat = build_matrices(net);
  const auto w = CostWeights::from_matrices(mat);
  const auto box = vvc::cli::config_box(cfg, net);
  const auto profiles = load_scenarios(profiles_path, net);
  if (args.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(args.seed);
  const auto data = generate_dataset(net, mat, profiles, box, w, cfg.train,
                                     resolve_threads(args.workers));
  save_dataset(data, net.controllable, net.base_mva, cfg.train, out, cfg.hash);
  std::cout << "wrote " << data.samples.size() << " samples to " << out << " (train "
            << data.train_idx.size() << ", val " << data.val_idx.size() << ")\n";
  if (data.skipped > 0) {
    std::cout << "warning: " << data.skipped << " points skipped (OPF did not converge)\n";
  }
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_path, const std::string& out_dir) {
  auto cfg = load_cfg(args);
  const auto net = load_network(cfg.network_path);
  const auto mat = build_matrices(net);
  const auto box = vvc::cli::config_box(cfg, net);
  const auto comm = vvc::cli::config_comm(cfg, net);
  const auto partition = vvc::cli::config_partition(cfg, comm);
  if (args.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(args.seed);

  const auto data = load_dataset(data_path, net.controllable, net.base_mva);
  Rng rng(cfg.train.seed);
  auto bundle = make_bundle(net.controllable, partition, box, cfg.epsilon, cfg.hidden,
                            cfg.beta, rng, cfg.input_scale);
  std::cout << "training " << partition.subgraphs.size() << " subgraph model(s) on "
            << data.train_idx.size() << " samples...\n";
  const auto history = train(bundle, data, cfg.train, args.workers > 0 ? args.workers : 1);
  const auto cert = certify_bundle(bundle, mat);

  fs::create_directories(out_dir);
  save_bundle(bundle, out_dir, net.base_mva, cfg.hash);
  save_loss_history(history, (fs::path(out_dir) / "loss_history.csv").string());
  const auto eval_val = evaluate(bundle, data, data.val_idx, resolve_threads(args.workers));

  nlohmann::json prov;
  prov["config_hash"] = cfg.hash;
  prov["dataset"] = data_path;
  prov["dataset_provenance"] = data.provenance;
  prov["final_train_loss"] = history.train_loss.empty() ? 0.0 : history.train_loss.back();
  prov["val_mse"] = eval_val.mse;
  prov["certified"] = cert.ok;
  prov["l_analytic"] = cert.l_analytic;
  prov["l_sampled"] = cert.l_sampled;
  prov["eps_bound"] = cert.eps_bound;
  write_file((fs::path(out_dir) / "training.json").string(), prov.dump(1));

  std::cout << "final train loss " << (history.train_loss.empty() ? 0.0 : history.train_loss.back())
            << ", validation mse " << eval_val.mse << "\n"
            << "certification: " << (cert.ok ? "ok" : "NOT certified") << " (L_analytic "
            << fmt_double(cert.l_analytic) << ", eps bound " << fmt_double(cert.eps_bound)
            << ", eps " << fmt_double(bundle.epsilon) << ")\n"
            << "bundle written to " << out_dir << "\n";
  return 0;
}

int cmd_verify(const CommonArgs& args, const std::string& manifest, long pairs,
               const std::string& out) {
  auto cfg = load_cfg(args);
  const auto net = load_network(cfg.network_path);
  const auto mat = build_matrices(net);
  auto bundle = load_bundle(manifest);
  CertifyOptions opt;
  opt.mono.n_pairs = pairs;
  opt.mono.threads = resolve_threads(args.workers);
  if (args.seed >= 0) opt.mono.seed = static_cast<std::uint64_t>(args.seed);
  const auto cert = certify_bundle(bundle, mat, opt);
  save_bundle(bundle, fs::path(manifest).parent_path().string(), net.base_mva, cfg.hash);

  nlohmann::json j;
  j["bundle"] = manifest;
  j["config_hash"] = cfg.hash;
  j["certified"] = cert.ok;
  j["l_analytic"] = cert.l_analytic;
  j["l_sampled"] = cert.l_sampled;
  j["eps_bound"] = cert.eps_bound;
  j["eps_used"] = cert.eps_used;
  j["monotonicity"] = {{"pairs", cert.mono_pairs},
                       {"violations", cert.mono_violations},
                       {"worst", cert.mono_worst}};
  j["reasons"] = cert.reasons;
  const std::string text = j.dump(1);
  if (!out.empty()) write_file(out, text);
  std::cout << text << "\n";
  return cert.ok ? 0 : 1;
}

struct SimulateArgs {
  std::string bundle;
  std::string profiles;
  std::string out;
  std::string traces_dir;
  std::string plot_buses = "24,28,31,35,39,40,42";
  double noise = -1.0;  // override for d_v
  int day = -1;         // slice one day out of the profile file
  bool no_opf = false;
};

int cmd_simulate(const CommonArgs& args, const SimulateArgs& sim_args) {
  auto cfg = load_cfg(args);
  const auto net = load_network(cfg.network_path);
  const auto mat = build_matrices(net);
  const auto w = CostWeights::from_matrices(mat);
  auto bundle = load_bundle(sim_args.bundle);
  const auto all = load_scenarios(sim_args.profiles, net);
  std::span<const PowerScenario> slice(all);
  const int ppd = cfg.profiles.points_per_day;
  if (sim_args.day >= 0) {
    if ((sim_args.day + 1) * ppd > static_cast<int>(all.size())) {
      throw StructureError("profile file has no day " + std::to_string(sim_args.day));
    }
    slice = std::span<const PowerScenario>(all.data() + sim_args.day * ppd, ppd);
  }
  SimConfig sc = cfg.sim;
  if (args.seed >= 0) sc.seed = static_cast<std::uint64_t>(args.seed);
  if (sim_args.noise >= 0) sc.noise.d_v = sim_args.noise;

  TraceSink sink;
  if (!sim_args.traces_dir.empty()) {
    fs::create_directories(sim_args.traces_dir);
    sink = [&](int point, const SimTrace& trace) {
      save_trace_csv(trace, bundle.bus_ids,
                     (fs::path(sim_args.traces_dir) / ("episode_" + std::to_string(point) + ".csv")).string());
    };
  }
  auto rep = run_day(net, mat, bundle, slice, sc, w, !sim_args.no_opf, sink);
  rep.config_hash = cfg.hash;
  save_day_report(rep, sc, sim_args.out);

  const auto buses = parse_bus_list(sim_args.plot_buses, net.n());
  const std::string stem = (fs::path(sim_args.out).parent_path() /
                            fs::path(sim_args.out).stem()).string();
  write_trajectory_csv(rep, buses, stem + "_voltages.csv");
  vvc::cli::write_svg_lines(stem + "_voltages.svg", "episode-terminal voltages",
                            trajectory_series(rep, buses));

  std::cout << "controller total " << fmt_double(rep.ctrl_total.total()) << " vs no-control "
            << fmt_double(rep.noctrl_total.total()) << " (improvement "
            << std::setprecision(4) << rep.improvement_pct << "%)\n"
            << "report written to " << sim_args.out << "\n";
  return 0;
}

struct ReportArgs {
  std::vector<std::string> bundles;  // name=manifest
  std::string profiles;
  std::string out_dir;
  std::string plot_buses = "24,28,31,35,39,40,42";
  int day = -1;
  double noise = -1.0;
};

int cmd_report(const CommonArgs& args, const ReportArgs& rep_args) {
  auto cfg = load_cfg(args);
  const auto net = load_network(cfg.network_path);
  const auto mat = build_matrices(net);
  const auto w = CostWeights::from_matrices(mat);
  const auto all = load_scenarios(rep_args.profiles, net);
  std::span<const PowerScenario> slice(all);
  const int ppd = cfg.profiles.points_per_day;
  if (rep_args.day >= 0) {
    if ((rep_args.day + 1) * ppd > static_cast<int>(all.size())) {
      throw StructureError("profile file has no day " + std::to_string(rep_args.day));
    }
    slice = std::span<const PowerScenario>(all.data() + rep_args.day * ppd, ppd);
  }
  SimConfig sc = cfg.sim;
  if (args.seed >= 0) sc.seed = static_cast<std::uint64_t>(args.seed);
  if (rep_args.noise >= 0) sc.noise.d_v = rep_args.noise;
  fs::create_directories(rep_args.out_dir);
  const auto buses = parse_bus_list(rep_args.plot_buses, net.n());

  struct Row {
    std::string name;
    CostTerms cost;
    double improvement;
  };
  std::vector<Row> rows;
  std::optional<CostTerms> noctrl, opf;
  nlohmann::json per_bundle = nlohmann::json::array();
  for (std::size_t i = 0; i < rep_args.bundles.size(); ++i) {
    const auto& spec = rep_args.bundles[i];
    const auto eq_pos = spec.find('=');
    if (eq_pos == std::string::npos) {
      throw StructureError("--bundle expects name=manifest.json, got '" + spec + "'");
    }
    const std::string name = spec.substr(0, eq_pos);
    auto bundle = load_bundle(spec.substr(eq_pos + 1));
    auto rep = run_day(net, mat, bundle, slice, sc, w, i == 0);
    rep.config_hash = cfg.hash;
    if (!noctrl) noctrl = rep.noctrl_total;
    if (rep.opf_total) opf = rep.opf_total;
    rows.push_back({name, rep.ctrl_total, rep.improvement_pct});
    save_day_report(rep, sc, (fs::path(rep_args.out_dir) / (name + "_day.json")).string());
    write_trajectory_csv(rep, buses,
                         (fs::path(rep_args.out_dir) / (name + "_voltages.csv")).string());
    vvc::cli::write_svg_lines(
        (fs::path(rep_args.out_dir) / (name + "_voltages.svg")).string(),
        name + ": episode-terminal voltages", trajectory_series(rep, buses));
    nlohmann::json bj;
    bj["name"] = name;
    bj["cost_volt"] = rep.ctrl_total.volt;
    bj["cost_loss"] = rep.ctrl_total.loss;
    bj["total"] = rep.ctrl_total.total();
    bj["improvement_pct"] = rep.improvement_pct;
    per_bundle.push_back(std::move(bj));
  }

  std::ostringstream table;
  table << std::left << std::setw(12) << "controller" << std::right << std::setw(12)
        << "cost-volt" << std::setw(12) << "cost-loss" << std::setw(12) << "total"
        << std::setw(14) << "improvement\n";
  auto line = [&](const std::string& name, const CostTerms& c, double improv, bool has_improv) {
    table << std::left << std::setw(12) << name << std::right << std::fixed
          << std::setprecision(4) << std::setw(12) << c.volt << std::setw(12) << c.loss
          << std::setw(12) << c.total();
    if (has_improv) {
      table << std::setw(12) << std::setprecision(1) << improv << "%";
    } else {
      table << std::setw(13) << "-";
    }
    table << "\n";
  };
  if (noctrl) line("no-ctrl", *noctrl, 0, false);
  for (const auto& row : rows) line(row.name, row.cost, row.improvement, true);
  if (opf && noctrl) {
    line("opf", *opf, 100.0 * (noctrl->total() - opf->total()) / noctrl->total(), true);
  }
  std::cout << table.str();
  write_file((fs::path(rep_args.out_dir) / "comparison.txt").string(), table.str());

  nlohmann::json j;
  j["format"] = "vvc-comparison";
  j["version"] = 1;
  j["config_hash"] = cfg.hash;
  j["noise_dv"] = sc.noise.d_v;
  if (noctrl) {
    j["no_control"] = {{"cost_volt", noctrl->volt}, {"cost_loss", noctrl->loss},
                       {"total", noctrl->total()}};
  }
  if (opf) {
    j["opf"] = {{"cost_volt", opf->volt}, {"cost_loss", opf->loss}, {"total", opf->total()}};
  }
  j["controllers"] = std::move(per_bundle);
  write_file((fs::path(rep_args.out_dir) / "comparison.json").string(), j.dump(1));
  std::cout << "artifacts written to " << rep_args.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stability-constrained learning-based Volt/Var control"};
  app.require_subcommand(1);
  bool error_json = false;
  app.add_flag("--error-json", error_json, "emit machine-readable errors");

  CommonArgs common;
  std::string net_path, profiles_path, data_path, out_path, bundle_path;
  int days_override = -1;
  long pairs = 100000;
  SimulateArgs sim_args;
  ReportArgs rep_args;

  auto add_common = [&](CLI::App* cmd, bool with_seed = true) {
    cmd->add_option("--config", common.config_path, "experiment config JSON");
    cmd->add_option("--workers", common.workers, "worker threads (0 = all cores)");
    if (with_seed) cmd->add_option("--seed", common.seed, "override the config seed");
  };

  auto* build_net = app.add_subcommand("build-net", "parse and summarize a network file");
  build_net->add_option("network", net_path, "network file")->required();

  auto* gen_profiles = app.add_subcommand("gen-profiles", "synthesize day profiles");
  add_common(gen_profiles);
  gen_profiles->add_option("--days", days_override, "number of days");
  gen_profiles->add_option("--out", out_path, "output CSV")->required();

  auto* gen_data = app.add_subcommand("gen-data", "label profiles with the OPF oracle");
  add_common(gen_data);
  gen_data->add_option("--profiles", profiles_path, "scenario CSV")->required();
  gen_data->add_option("--out", out_path, "output dataset CSV")->required();

  auto* train_cmd = app.add_subcommand("train", "train a controller bundle");
  add_common(train_cmd);
  train_cmd->add_option("--data", data_path, "dataset CSV")->required();
  train_cmd->add_option("--out", out_path, "output bundle directory")->required();

  auto* verify_cmd = app.add_subcommand("verify", "certify a bundle's stability conditions");
  add_common(verify_cmd);
  verify_cmd->add_option("--bundle", bundle_path, "bundle manifest")->required();
  verify_cmd->add_option("--pairs", pairs, "monotonicity sample pairs");
  verify_cmd->add_option("--out", out_path, "certification report JSON");

  auto* simulate_cmd = app.add_subcommand("simulate", "closed-loop day simulation");
  add_common(simulate_cmd);
  simulate_cmd->add_option("--bundle", sim_args.bundle, "bundle manifest")->required();
  simulate_cmd->add_option("--profiles", sim_args.profiles, "scenario CSV")->required();
  simulate_cmd->add_option("--out", sim_args.out, "day report JSON")->required();
  simulate_cmd->add_option("--day", sim_args.day, "slice one day from the profile file");
  simulate_cmd->add_option("--noise", sim_args.noise, "voltage measurement noise fraction");
  simulate_cmd->add_option("--traces", sim_args.traces_dir, "write per-episode trace CSVs here");
  simulate_cmd->add_option("--plot-buses", sim_args.plot_buses, "buses for the trajectory plot");
  simulate_cmd->add_flag("--no-opf", sim_args.no_opf, "skip the OPF reference");

  auto* report_cmd = app.add_subcommand("report", "compare bundles on one day");
  add_common(report_cmd);
  report_cmd->add_option("--bundle", rep_args.bundles, "name=manifest.json (repeatable)")
      ->required();
  report_cmd->add_option("--profiles", rep_args.profiles, "scenario CSV")->required();
  report_cmd->add_option("--out", rep_args.out_dir, "output directory")->required();
  report_cmd->add_option("--day", rep_args.day, "slice one day from the profile file");
  report_cmd->add_option("--noise", rep_args.noise, "voltage measurement noise fraction");
  report_cmd->add_option("--plot-buses", rep_args.plot_buses, "buses for the trajectory plots");

  CLI11_PARSE(app, argc, argv);

  try {
    if (build_net->parsed()) return cmd_build_net(net_path);
    if (gen_profiles->parsed()) return cmd_gen_profiles(common, days_override, out_path);
    if (gen_data->parsed()) return cmd_gen_data(common, profiles_path, out_path);
    if (train_cmd->parsed()) return cmd_train(common, data_path, out_path);
    if (verify_cmd->parsed()) return cmd_verify(common, bundle_path, pairs, out_path);
    if (simulate_cmd->parsed()) {
      sim_args.profiles = sim_args.profiles.empty() ? profiles_path : sim_args.profiles;
      return cmd_simulate(common, sim_args);
    }
    if (report_cmd->parsed()) return cmd_report(common, rep_args);
  } catch (const Error& e) {
    if (error_json) {
      nlohmann::json j;
      const char* kind = dynamic_cast<const ParseError*>(&e)         ? "parse"
                         : dynamic_cast<const StructureError*>(&e)   ? "structure"
                         : dynamic_cast<const NumericError*>(&e)     ? "numeric"
                         : dynamic_cast<const ConvergenceError*>(&e) ? "convergence"
                                                                     : "error";
      j["error"] = {{"type", kind}, {"message", e.what()}};
      std::cout << j.dump() << "\n";
    } else {
      std::cerr << "error: " << e.what() << "\n";
    }
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
