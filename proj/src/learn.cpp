#include "vvc/learn.hpp"

#include <json.hpp>

#include <cmath>
#include <optional>
#include <sstream>

#include "vvc/parallel.hpp"

namespace vvc {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw StructureError("learning_rate must be positive");
  if (!(lr_decay > 0) || lr_decay > 1) throw StructureError("lr_decay must be in (0, 1]");
  if (momentum < 0 || momentum >= 1) throw StructureError("momentum must be in [0, 1)");
  if (epochs < 0 || batch_size < 1) throw StructureError("bad epochs/batch_size");
  if (augmentation_noise < 0 || augmentation_noise > 0.5) {
    throw StructureError("augmentation_noise must be in [0, 0.5]");
  }
  if (augmentation_factor < 0) throw StructureError("augmentation_factor must be >= 0");
  if (points_per_day < 1) throw StructureError("points_per_day must be >= 1");
}

namespace {

std::string config_fingerprint(const TrainConfig& cfg, std::size_t n_profiles) {
  std::ostringstream ss;
  ss << cfg.seed << "|" << cfg.augmentation_noise << "|" << cfg.augmentation_factor << "|"
     << cfg.nonlinear_refine_passes << "|" << cfg.points_per_day << "|" << n_profiles;
  return content_hash(ss.str());
}

LabeledDataset generate_impl(const GridNetwork& net, const SensitivityMatrices& mat,
                             std::span<const PowerScenario> profiles, const ReactiveBox& box,
                             const CostWeights& w, const TrainConfig& cfg, int threads,
                             bool serial) {
  cfg.validate();
  if (profiles.empty()) throw StructureError("no profiles to label");
  const int copies = 1 + cfg.augmentation_factor;
  const std::int64_t total = static_cast<std::int64_t>(profiles.size()) * copies;
  const auto c_rows = mat.map.c_rows();

  std::vector<std::optional<LabeledSample>> slots(total);
  auto body = [&](std::int64_t i) {
    const int base = static_cast<int>(i / copies);
    const int copy = static_cast<int>(i % copies);
    PowerScenario scen = profiles[base];
    if (copy > 0) {
      Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(i));
      for (int k = 0; k < scen.p.size(); ++k) {
        scen.p[k] *= 1.0 + rng.symmetric(cfg.augmentation_noise);
      }
      for (int k = 0; k < scen.q_uncontrolled.size(); ++k) {
        scen.q_uncontrolled[k] *= 1.0 + rng.symmetric(cfg.augmentation_noise);
      }
    }
    try {
      OpfOptions opt;
      opt.refine_passes = cfg.nonlinear_refine_passes;
      const OpfResult res = cfg.nonlinear_refine_passes > 0
                                ? solve_opf_refined(net, mat, scen, box, w, opt)
                                : solve_opf(mat, scen, box, w, opt);
      LabeledSample s;
      s.q_star = res.q_star;
      s.v_c.resize(c_rows.size());
      for (std::size_t k = 0; k < c_rows.size(); ++k) s.v_c[k] = res.v_star[c_rows[k]];
      s.day = base / cfg.points_per_day;
      s.base_index = base;
      slots[i] = std::move(s);
    } catch (const ConvergenceError&) {
      // point skipped; reported via LabeledDataset::skipped
    } catch (const NumericError&) {
    }
  };
  if (serial) {
    for (std::int64_t i = 0; i < total; ++i) body(i);
  } else {
    parallel_for(total, threads, body);
  }

  LabeledDataset data;
  for (auto& slot : slots) {
    if (slot) {
      data.samples.push_back(std::move(*slot));
    } else {
      ++data.skipped;
    }
  }
  data.provenance = config_fingerprint(cfg, profiles.size());
  data.solver_note = cfg.nonlinear_refine_passes > 0
                         ? "pg_tol=1e-8 model=nonlinear-refined"
                         : "pg_tol=1e-8 model=linear";

  // hold out the trailing validation days; fall back to the last quarter
  // when the data is too short for a day-based split
  const int max_day = static_cast<int>((profiles.size() - 1)) / cfg.points_per_day;
  const int first_val_day = max_day + 1 - cfg.validation_days;
  bool day_split_ok = first_val_day > 0;
  if (day_split_ok) {
    for (int i = 0; i < static_cast<int>(data.samples.size()); ++i) {
      (data.samples[i].day >= first_val_day ? data.val_idx : data.train_idx).push_back(i);
    }
    if (data.train_idx.empty() || data.val_idx.empty()) {
      data.train_idx.clear();
      data.val_idx.clear();
      day_split_ok = false;
    }
  }
  if (!day_split_ok) {
    const int cut = std::max(1, static_cast<int>(data.samples.size() * 3 / 4));
    for (int i = 0; i < static_cast<int>(data.samples.size()); ++i) {
      (i < cut ? data.train_idx : data.val_idx).push_back(i);
    }
  }
  return data;
}

}  // namespace

LabeledDataset generate_dataset(const GridNetwork& net, const SensitivityMatrices& mat,
                                std::span<const PowerScenario> profiles,
                                const ReactiveBox& box, const CostWeights& w,
                                const TrainConfig& cfg, int threads) {
  return generate_impl(net, mat, profiles, box, w, cfg, threads, false);
}

LabeledDataset generate_dataset_serial(const GridNetwork& net, const SensitivityMatrices& mat,
                                       std::span<const PowerScenario> profiles,
                                       const ReactiveBox& box, const CostWeights& w,
                                       const TrainConfig& cfg) {
  return generate_impl(net, mat, profiles, box, w, cfg, 1, true);
}

namespace {

// raw-phi squared error, the training objective
double raw_mse(const ControllerBundle& b, const LabeledDataset& data,
               std::span<const int> idx) {
  if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (int i : idx) {
    sum += (data.samples[i].q_star - phi_raw(b, data.samples[i].v_c)).squaredNorm();
  }
  return sum / static_cast<double>(idx.size());
}

struct BatchGrads {
  std::vector<IcnnGradients> per_model;
};

BatchGrads zero_batch(const ControllerBundle& b) {
  BatchGrads g;
  for (const auto& m : b.models) g.per_model.push_back(zero_gradients(m));
  return g;
}

// Gradient of the mean squared raw-phi error over `batch`. Work fans out in
// fixed-size chunks merged in order, so any thread count reproduces the
// serial sum bit for bit.
BatchGrads batch_gradient(const ControllerBundle& b, const LabeledDataset& data,
                          std::span<const int> batch, int threads) {
  constexpr int kChunk = 8;
  const int n_chunks = static_cast<int>((batch.size() + kChunk - 1) / kChunk);
  std::vector<BatchGrads> partial(n_chunks);
  const double scale = 2.0 / static_cast<double>(batch.size());

  parallel_for(n_chunks, threads, [&](std::int64_t c) {
    BatchGrads acc = zero_batch(b);
    const std::size_t lo = static_cast<std::size_t>(c) * kChunk;
    const std::size_t hi = std::min(batch.size(), lo + kChunk);
    for (std::size_t s = lo; s < hi; ++s) {
      const LabeledSample& sample = data.samples[batch[s]];
      const VectorXd residual = phi_raw(b, sample.v_c) - sample.q_star;
      for (std::size_t l = 0; l < b.models.size(); ++l) {
        const auto& slot = b.slots[l];
        VectorXd v_sub(slot.size()), up(slot.size());
        for (std::size_t k = 0; k < slot.size(); ++k) {
          v_sub[k] = sample.v_c[slot[k]];
          up[k] = -scale * residual[slot[k]];
        }
        IcnnUpstream u;
        u.on_gradient = std::move(up);
        accumulate(acc.per_model[l], icnn_param_gradient(b.models[l], v_sub, u));
      }
    }
    partial[c] = std::move(acc);
  });

  BatchGrads total = zero_batch(b);
  for (const auto& part : partial) {
    for (std::size_t l = 0; l < total.per_model.size(); ++l) {
      accumulate(total.per_model[l], part.per_model[l]);
    }
  }
  return total;
}

}  // namespace

TrainResult train(ControllerBundle& bundle, const LabeledDataset& data,
                  const TrainConfig& cfg, int threads) {
  cfg.validate();
  bundle.validate();
  if (data.samples.empty() || data.train_idx.empty()) {
    throw StructureError("training needs a nonempty train split");
  }

  // each overlap component shares the curvature budget between its models
  std::vector<double> model_cap(bundle.models.size(), 0.0);
  if (cfg.lipschitz_cap > 0.0) {
    const auto comp = overlap_components(bundle.partition);
    std::map<int, int> comp_size;
    for (int c : comp) ++comp_size[c];
    for (std::size_t l = 0; l < bundle.models.size(); ++l) {
      model_cap[l] = cfg.lipschitz_cap / comp_size[comp[l]];
    }
  }

  std::vector<IcnnGradients> velocity;
  for (const auto& m : bundle.models) velocity.push_back(zero_gradients(m));

  TrainResult result;
  std::vector<int> order = data.train_idx;
  double lr = cfg.learning_rate;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch > 0) lr *= cfg.lr_decay;
    Rng shuffle_rng = Rng::stream(cfg.seed, 0xE0000000ull + static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const int> batch(order.data() + start, stop - start);
      const BatchGrads grads = batch_gradient(bundle, data, batch, threads);
      for (std::size_t l = 0; l < bundle.models.size(); ++l) {
        IcnnModel& m = bundle.models[l];
        for (std::size_t k = 0; k < m.layers.size(); ++k) {
          auto& vel = velocity[l].layers[k];
          const auto& g = grads.per_model[l].layers[k];
          IcnnLayer& ly = m.layers[k];
          vel.Wz = cfg.momentum * vel.Wz - lr * (g.Wz + cfg.weight_decay * ly.Wz);
          vel.Wx = cfg.momentum * vel.Wx - lr * (g.Wx + cfg.weight_decay * ly.Wx);
          vel.b = cfg.momentum * vel.b - lr * g.b;
          ly.Wz += vel.Wz;
          ly.Wx += vel.Wx;
          ly.b += vel.b;
        }
        project_params_nonneg(m);
        if (cfg.lipschitz_cap > 0.0) {
          const double bound = icnn_gradient_lipschitz_bound(m, true);
          if (bound > model_cap[l]) {
            const double scale = model_cap[l] / bound;
            IcnnLayer& out = m.layers.back();
            out.Wz *= scale;
            out.Wx *= scale;
            out.b *= scale;
          }
        }
      }
    }
    const double tl = raw_mse(bundle, data, data.train_idx);
    const double vl = raw_mse(bundle, data, data.val_idx);
    if (!std::isfinite(tl)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                         " (learning_rate=" + fmt_double(cfg.learning_rate) + ")");
    }
    result.train_loss.push_back(tl);
    result.val_loss.push_back(vl);
  }
  return result;
}

namespace {

EvalResult eval_impl(const PhiFn& fn, const LabeledDataset& data, std::span<const int> indices,
                     int dim, int threads, bool serial) {
  EvalResult out;
  out.per_bus_mse = VectorXd::Zero(dim);
  if (indices.empty()) return out;

  std::vector<VectorXd> sq(indices.size());
  auto body = [&](std::int64_t k) {
    const LabeledSample& s = data.samples[indices[k]];
    const VectorXd err = fn(s.v_c) - s.q_star;
    sq[k] = err.cwiseProduct(err);
  };
  if (serial) {
    for (std::int64_t k = 0; k < static_cast<std::int64_t>(indices.size()); ++k) body(k);
  } else {
    parallel_for(static_cast<std::int64_t>(indices.size()), threads, body);
  }
  for (const VectorXd& e : sq) out.per_bus_mse += e;
  out.per_bus_mse /= static_cast<double>(indices.size());
  out.mse = out.per_bus_mse.sum();
  return out;
}

}  // namespace

EvalResult evaluate(const ControllerBundle& bundle, const LabeledDataset& data,
                    std::span<const int> indices, int threads) {
  return eval_impl(phi_fn(bundle), data, indices, bundle.dim(), threads, false);
}

EvalResult evaluate(const ControllerBundle& bundle, const LabeledDataset& data, int threads) {
  std::vector<int> all(data.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return eval_impl(phi_fn(bundle), data, all, bundle.dim(), threads, false);
}

EvalResult evaluate_phi(const PhiFn& fn, const LabeledDataset& data,
                        std::span<const int> indices) {
  const int dim = data.samples.empty() ? 0 : static_cast<int>(data.samples[0].q_star.size());
  return eval_impl(fn, data, indices, dim, 1, true);
}

EvalResult evaluate_serial(const ControllerBundle& bundle, const LabeledDataset& data,
                           std::span<const int> indices) {
  return eval_impl(phi_fn(bundle), data, indices, bundle.dim(), 1, true);
}

// --- files ---------------------------------------------------------------

void save_dataset(const LabeledDataset& data, std::span<const int> bus_ids,
                  double base_mva, const TrainConfig& cfg, const std::string& path,
                  const std::string& config_hash) {
  std::ostringstream out;
  out << "# vvc-dataset v1\n";
  out << "# solver: " << data.solver_note << "\n";
  out << "# provenance: " << data.provenance << "\n";
  out << "# skipped: " << data.skipped << "\n";
  out << "day,base_index";
  for (int b : bus_ids) out << ",v_bus" << b;
  for (int b : bus_ids) out << ",qstar_mvar_bus" << b;
  out << "\n";
  for (const LabeledSample& s : data.samples) {
    out << s.day << "," << s.base_index;
    for (int i = 0; i < s.v_c.size(); ++i) out << "," << fmt_double(s.v_c[i]);
    for (int i = 0; i < s.q_star.size(); ++i) out << "," << fmt_double(s.q_star[i] * base_mva);
    out << "\n";
  }
  write_file(path, out.str());

  nlohmann::json meta;
  meta["provenance"] = data.provenance;
  meta["skipped"] = data.skipped;
  meta["solver"] = data.solver_note;
  meta["train_idx"] = data.train_idx;
  meta["val_idx"] = data.val_idx;
  if (!config_hash.empty()) meta["config_hash"] = config_hash;
  meta["config"] = {{"seed", cfg.seed},
                    {"augmentation_noise", cfg.augmentation_noise},
                    {"augmentation_factor", cfg.augmentation_factor},
                    {"validation_days", cfg.validation_days},
                    {"points_per_day", cfg.points_per_day},
                    {"nonlinear_refine_passes", cfg.nonlinear_refine_passes}};
  write_file(path + ".meta.json", meta.dump(1));
}

LabeledDataset load_dataset(const std::string& path, std::span<const int> bus_ids,
                            double base_mva) {
  const std::string text = read_file(path);
  LabeledDataset data;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  bool header_done = false;
  const std::size_t ncols = 2 + 2 * bus_ids.size();
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string_view sv = trim(raw);
    if (sv.empty() || sv.front() == '#') continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto fields = split(sv, ',');
    if (!header_done) {
      if (fields.size() != ncols) {
        throw ParseError(where + ": expected " + std::to_string(ncols) + " columns, got " +
                         std::to_string(fields.size()));
      }
      header_done = true;
      continue;
    }
    if (fields.size() != ncols) {
      throw ParseError(where + ": expected " + std::to_string(ncols) + " fields, got " +
                       std::to_string(fields.size()));
    }
    LabeledSample s;
    s.day = static_cast<int>(parse_long(fields[0], where));
    s.base_index = static_cast<int>(parse_long(fields[1], where));
    s.v_c.resize(bus_ids.size());
    s.q_star.resize(bus_ids.size());
    for (std::size_t i = 0; i < bus_ids.size(); ++i) {
      s.v_c[i] = parse_double(fields[2 + i], where);
      s.q_star[i] = parse_double(fields[2 + bus_ids.size() + i], where) / base_mva;
    }
    data.samples.push_back(std::move(s));
  }

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(path + ".meta.json"));
    data.provenance = meta.at("provenance").get<std::string>();
    data.skipped = meta.at("skipped").get<int>();
    data.solver_note = meta.at("solver").get<std::string>();
    data.train_idx = meta.at("train_idx").get<std::vector<int>>();
    data.val_idx = meta.at("val_idx").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ".meta.json: " + e.what());
  }
  for (int i : data.train_idx) {
    if (i < 0 || i >= static_cast<int>(data.samples.size())) {
      throw ParseError(path + ".meta.json: train index out of range");
    }
  }
  for (int i : data.val_idx) {
    if (i < 0 || i >= static_cast<int>(data.samples.size())) {
      throw ParseError(path + ".meta.json: val index out of range");
    }
  }
  return data;
}

void save_loss_history(const TrainResult& result, const std::string& path) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < result.train_loss.size(); ++e) {
    out << e << "," << fmt_double(result.train_loss[e]) << ","
        << fmt_double(result.val_loss[e]) << "\n";
  }
  write_file(path, out.str());
}

}  // namespace vvc
