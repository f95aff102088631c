#include "vvc/icnn.hpp"

#include <json.hpp>

#include <Eigen/SVD>
#include <cmath>

namespace vvc {

namespace {

double softplus(double t, double beta) {
  // max(t,0) + log1p(exp(-beta*|t|))/beta, stable for both tails
  const double m = std::max(t, 0.0);
  return m + std::log1p(std::exp(-beta * std::abs(t))) / beta;
}

double sigmoid(double t, double beta) {  // softplus'
  if (t >= 0) return 1.0 / (1.0 + std::exp(-beta * t));
  const double e = std::exp(beta * t);
  return e / (1.0 + e);
}

double dsigmoid(double t, double beta) {  // softplus''
  const double s = sigmoid(t, beta);
  return beta * s * (1.0 - s);
}

VectorXd apply(const VectorXd& a, double beta, double (*f)(double, double)) {
  VectorXd out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = f(a[i], beta);
  return out;
}

struct ForwardTrace {
  VectorXd u;               // centered input
  std::vector<VectorXd> a;  // preactivations, one per layer
  std::vector<VectorXd> z;  // activations for hidden layers
  double y = 0.0;
};

ForwardTrace run_forward(const IcnnModel& m, const VectorXd& x) {
  if (x.size() != m.input_dim) {
    throw StructureError("icnn input size " + std::to_string(x.size()) + " != " +
                         std::to_string(m.input_dim));
  }
  const int L = m.depth();
  ForwardTrace t;
  t.u = (x.array() - m.input_center) / m.input_scale;
  t.a.resize(L);
  t.z.resize(L);
  for (int k = 0; k < L; ++k) {
    const IcnnLayer& ly = m.layers[k];
    VectorXd a = ly.b;
    if (k > 0 && ly.Wz.cols() > 0) a += ly.Wz * t.z[k - 1];
    if (ly.Wx.cols() > 0) a += ly.Wx * t.u;
    t.a[k] = std::move(a);
    if (k + 1 < L) t.z[k] = apply(t.a[k], m.beta, softplus);
  }
  t.y = t.a[L - 1][0];
  if (!std::isfinite(t.y)) throw NumericError("icnn forward produced a non-finite value");
  return t;
}

double matrix_norm(const MatrixXd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  return Eigen::JacobiSVD<MatrixXd>(m).singularValues()(0);
}

// power iteration on the Gram matrix; plenty for training-loop budgeting
double matrix_norm_fast(const MatrixXd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  VectorXd v = VectorXd::Ones(m.cols()) / std::sqrt(static_cast<double>(m.cols()));
  double s2 = 0.0;
  for (int it = 0; it < 100; ++it) {
    VectorXd w = m.transpose() * (m * v);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    const double next = v.dot(w);
    if (it > 2 && std::abs(next - s2) <= 1e-10 * next) {
      s2 = next;
      break;
    }
    s2 = next;
    v = w / nw;
  }
  return std::sqrt(s2);
}

}  // namespace

void IcnnModel::validate() const {
  if (layers.empty()) throw StructureError("icnn has no layers");
  if (input_dim <= 0) throw StructureError("icnn input_dim must be positive");
  if (!(beta > 0)) throw StructureError("icnn beta must be positive");
  if (!(input_scale > 0)) throw StructureError("icnn input_scale must be positive");
  int prev = 0;
  for (int k = 0; k < depth(); ++k) {
    const IcnnLayer& ly = layers[k];
    const auto rows = ly.b.size();
    if (k == 0) {
      if (ly.Wz.cols() != 0) throw StructureError("first icnn layer must have empty Wz");
    } else {
      if (ly.Wz.rows() != rows || ly.Wz.cols() != prev) {
        throw StructureError("icnn layer " + std::to_string(k) + " Wz shape mismatch");
      }
      if (ly.Wz.size() > 0 && ly.Wz.minCoeff() < 0.0) {
        throw StructureError("icnn layer " + std::to_string(k) + " has negative Wz entries");
      }
    }
    if (ly.Wx.cols() > 0 && (ly.Wx.rows() != rows || ly.Wx.cols() != input_dim)) {
      throw StructureError("icnn layer " + std::to_string(k) + " Wx shape mismatch");
    }
    prev = static_cast<int>(rows);
  }
  if (prev != 1) throw StructureError("icnn output layer must be scalar");
}

IcnnModel make_icnn(int input_dim, std::span<const int> hidden, double beta, Rng& rng,
                    bool skip_links, double input_scale) {
  IcnnModel m;
  m.input_dim = input_dim;
  m.beta = beta;
  m.skip_links = skip_links;
  m.input_scale = input_scale;
  std::vector<int> widths(hidden.begin(), hidden.end());
  widths.push_back(1);
  int prev = 0;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    IcnnLayer ly;
    const int rows = widths[k];
    ly.Wz.resize(rows, k == 0 ? 0 : prev);
    for (int i = 0; i < ly.Wz.rows(); ++i) {
      for (int j = 0; j < ly.Wz.cols(); ++j) {
        ly.Wz(i, j) = std::abs(rng.symmetric(1.0)) / static_cast<double>(prev);
      }
    }
    const bool has_skip = (k == 0) || skip_links;
    ly.Wx.resize(rows, has_skip ? input_dim : 0);
    // normalize by both fans so the initial gradient map stays O(1) even
    // for one-input models; keeps the analytic curvature bound small
    const double sx = 1.0 / std::sqrt(static_cast<double>(std::max(input_dim, rows)));
    for (int i = 0; i < ly.Wx.rows(); ++i) {
      for (int j = 0; j < ly.Wx.cols(); ++j) ly.Wx(i, j) = rng.symmetric(sx);
    }
    ly.b.resize(rows);
    for (int i = 0; i < rows; ++i) ly.b[i] = rng.symmetric(sx);
    m.layers.push_back(std::move(ly));
    prev = rows;
  }
  m.validate();
  return m;
}

double icnn_forward(const IcnnModel& m, const VectorXd& x) { return run_forward(m, x).y; }

VectorXd icnn_input_gradient(const IcnnModel& m, const VectorXd& x) {
  const ForwardTrace t = run_forward(m, x);
  const int L = m.depth();
  VectorXd grad_u = VectorXd::Zero(m.input_dim);
  // s: sensitivity of y w.r.t. the layer's activation input z_{k-1}
  VectorXd s = VectorXd::Ones(1);  // output layer seed
  for (int k = L - 1; k >= 0; --k) {
    const IcnnLayer& ly = m.layers[k];
    // adjoint of the preactivation a_k
    VectorXd abar;
    if (k == L - 1) {
      abar = s;  // affine output
    } else {
      abar = s.cwiseProduct(apply(t.a[k], m.beta, sigmoid));
    }
    if (ly.Wx.cols() > 0) grad_u += ly.Wx.transpose() * abar;
    if (k > 0) s = ly.Wz.transpose() * abar;
  }
  return grad_u / m.input_scale;  // chain through the input normalization
}

IcnnGradients zero_gradients(const IcnnModel& m) {
  IcnnGradients g;
  for (const IcnnLayer& ly : m.layers) {
    IcnnLayer z;
    z.Wz = MatrixXd::Zero(ly.Wz.rows(), ly.Wz.cols());
    z.Wx = MatrixXd::Zero(ly.Wx.rows(), ly.Wx.cols());
    z.b = VectorXd::Zero(ly.b.size());
    g.layers.push_back(std::move(z));
  }
  return g;
}

void accumulate(IcnnGradients& acc, const IcnnGradients& g, double scale) {
  for (std::size_t k = 0; k < acc.layers.size(); ++k) {
    acc.layers[k].Wz += scale * g.layers[k].Wz;
    acc.layers[k].Wx += scale * g.layers[k].Wx;
    acc.layers[k].b += scale * g.layers[k].b;
  }
}

IcnnGradients icnn_param_gradient(const IcnnModel& m, const VectorXd& x,
                                  const IcnnUpstream& up) {
  const bool tangent = up.on_gradient.size() > 0;
  if (tangent && up.on_gradient.size() != m.input_dim) {
    throw StructureError("icnn upstream gradient size mismatch");
  }
  const int L = m.depth();
  const ForwardTrace t = run_forward(m, x);

  // Tangent stream along the input direction w := up.on_gradient, so that
  // the tangent of y equals w^T grad g. Differentiating that scalar w.r.t.
  // the parameters yields the second-order term exactly.
  std::vector<VectorXd> at(L), zt(L);
  VectorXd ut;
  if (tangent) {
    ut = up.on_gradient / m.input_scale;
    for (int k = 0; k < L; ++k) {
      const IcnnLayer& ly = m.layers[k];
      VectorXd a = VectorXd::Zero(ly.b.size());
      if (k > 0 && ly.Wz.cols() > 0) a += ly.Wz * zt[k - 1];
      if (ly.Wx.cols() > 0) a += ly.Wx * ut;
      at[k] = std::move(a);
      if (k + 1 < L) zt[k] = apply(t.a[k], m.beta, sigmoid).cwiseProduct(at[k]);
    }
  }

  IcnnGradients g = zero_gradients(m);
  // zbar/ztbar: adjoints of z_k and its tangent, seeded by the output layer
  VectorXd zbar, ztbar;
  for (int k = L - 1; k >= 0; --k) {
    const IcnnLayer& ly = m.layers[k];
    VectorXd abar, atbar;
    if (k == L - 1) {
      abar = VectorXd::Constant(1, up.on_value);
      atbar = VectorXd::Constant(1, tangent ? 1.0 : 0.0);
    } else {
      const VectorXd sp = apply(t.a[k], m.beta, sigmoid);
      abar = zbar.cwiseProduct(sp);
      if (tangent) {
        const VectorXd spp = apply(t.a[k], m.beta, dsigmoid);
        abar += ztbar.cwiseProduct(spp).cwiseProduct(at[k]);
        atbar = ztbar.cwiseProduct(sp);
      }
    }
    if (k > 0) {
      g.layers[k].Wz += abar * t.z[k - 1].transpose();
      zbar = ly.Wz.transpose() * abar;
      if (tangent) {
        g.layers[k].Wz += atbar * zt[k - 1].transpose();
        ztbar = ly.Wz.transpose() * atbar;
      }
    }
    if (ly.Wx.cols() > 0) {
      g.layers[k].Wx += abar * t.u.transpose();
      if (tangent) g.layers[k].Wx += atbar * ut.transpose();
    }
    g.layers[k].b += abar;
  }
  return g;
}

void project_params_nonneg(IcnnModel& m) {
  for (IcnnLayer& ly : m.layers) {
    if (ly.Wz.size() > 0) ly.Wz = ly.Wz.cwiseMax(0.0);
  }
}

double icnn_gradient_lipschitz_bound(const IcnnModel& m, bool fast) {
  const int L = m.depth();
  std::vector<double> wz(L), wx(L);
  for (int k = 0; k < L; ++k) {
    wz[k] = fast ? matrix_norm_fast(m.layers[k].Wz) : matrix_norm(m.layers[k].Wz);
    wx[k] = (fast ? matrix_norm_fast(m.layers[k].Wx) : matrix_norm(m.layers[k].Wx)) /
            m.input_scale;
  }
  // A[k]: Lipschitz constant of z_k w.r.t. the input (softplus slope <= 1)
  std::vector<double> A(L, 0.0);
  A[0] = wx[0];
  for (int k = 1; k < L; ++k) A[k] = wz[k] * A[k - 1] + wx[k];
  // S[k]: norm bound of the backprop sensitivity entering layer k
  std::vector<double> S(L, 0.0), G(L, 0.0);
  S[L - 1] = 1.0;
  for (int k = L - 2; k >= 0; --k) S[k] = wz[k + 1] * S[k + 1];
  // G[k]: Lipschitz bound of that sensitivity; softplus'' <= beta/4
  for (int k = L - 2; k >= 0; --k) {
    G[k] = (m.beta / 4.0) * wz[k + 1] * S[k + 1] * A[k] + wz[k + 1] * G[k + 1];
  }
  double bound = 0.0;
  for (int k = 0; k < L - 1; ++k) bound += wx[k] * G[k];
  return bound;
}

// --- checkpoint io -----------------------------------------------------

namespace {

using nlohmann::json;

json matrix_to_json(const MatrixXd& m) {
  if (m.cols() == 0 || m.rows() == 0) return json::array();
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const json& j, int rows_hint) {
  if (j.empty()) return MatrixXd(rows_hint, 0);
  MatrixXd m(j.size(), j.at(0).size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& row = j.at(i);
    if (static_cast<Eigen::Index>(row.size()) != m.cols()) {
      throw ParseError("icnn checkpoint: ragged matrix");
    }
    for (std::size_t c = 0; c < row.size(); ++c) m(i, c) = row.at(c).get<double>();
  }
  return m;
}

}  // namespace

std::string icnn_to_json(const IcnnModel& m) {
  json j;
  j["format"] = "vvc-icnn";
  j["version"] = 1;
  j["input_dim"] = m.input_dim;
  j["beta"] = m.beta;
  j["skip_links"] = m.skip_links;
  j["input_center"] = m.input_center;
  j["input_scale"] = m.input_scale;
  json layers = json::array();
  for (const IcnnLayer& ly : m.layers) {
    json lj;
    lj["Wz"] = matrix_to_json(ly.Wz);
    lj["Wx"] = matrix_to_json(ly.Wx);
    json b = json::array();
    for (int i = 0; i < ly.b.size(); ++i) b.push_back(ly.b[i]);
    lj["b"] = std::move(b);
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j.dump(1);
}

IcnnModel icnn_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("icnn checkpoint: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "vvc-icnn" || j.at("version").get<int>() != 1) {
      throw ParseError("icnn checkpoint: unsupported format/version");
    }
    IcnnModel m;
    m.input_dim = j.at("input_dim").get<int>();
    m.beta = j.at("beta").get<double>();
    m.skip_links = j.at("skip_links").get<bool>();
    m.input_center = j.at("input_center").get<double>();
    m.input_scale = j.at("input_scale").get<double>();
    for (const auto& lj : j.at("layers")) {
      IcnnLayer ly;
      const auto& bj = lj.at("b");
      ly.b.resize(bj.size());
      for (std::size_t i = 0; i < bj.size(); ++i) ly.b[i] = bj.at(i).get<double>();
      ly.Wz = matrix_from_json(lj.at("Wz"), static_cast<int>(ly.b.size()));
      ly.Wx = matrix_from_json(lj.at("Wx"), static_cast<int>(ly.b.size()));
      m.layers.push_back(std::move(ly));
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("icnn checkpoint: ") + e.what());
  }
}

void save_icnn(const IcnnModel& m, const std::string& path) {
  write_file(path, icnn_to_json(m));
}

IcnnModel load_icnn(const std::string& path) { return icnn_from_json(read_file(path)); }

}  // namespace vvc
