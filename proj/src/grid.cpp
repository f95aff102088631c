#include "vvc/grid.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <sstream>

namespace vvc {

namespace {

std::string edge_name(const Line& l) {
  return "(" + std::to_string(l.from) + ", " + std::to_string(l.to) + ")";
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};

VectorXd subvector(const VectorXd& v, std::span<const int> idx) {
  VectorXd out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
  return out;
}

// Lines oriented away from the substation, parents before children.
struct OrientedTree {
  struct Branch {
    int parent;
    int child;
    double r;  // p.u.
    double x;  // p.u.
  };
  std::vector<Branch> order;               // BFS order from the root
  std::vector<std::vector<int>> children;  // bus -> branch indices below it
};

OrientedTree orient_tree(const GridNetwork& net) {
  const int nb = net.bus_count;
  std::vector<std::vector<std::pair<int, int>>> adj(nb);  // (neighbor, line idx)
  for (int e = 0; e < static_cast<int>(net.lines.size()); ++e) {
    adj[net.lines[e].from].push_back({net.lines[e].to, e});
    adj[net.lines[e].to].push_back({net.lines[e].from, e});
  }
  OrientedTree tree;
  tree.children.resize(nb);
  std::vector<char> seen(nb, 0);
  seen[0] = 1;
  std::deque<int> queue{0};
  const double zb = net.z_base();
  while (!queue.empty()) {
    int bus = queue.front();
    queue.pop_front();
    for (auto [nbr, e] : adj[bus]) {
      if (seen[nbr]) continue;
      seen[nbr] = 1;
      tree.children[bus].push_back(static_cast<int>(tree.order.size()));
      tree.order.push_back({bus, nbr, net.lines[e].r_ohm / zb, net.lines[e].x_ohm / zb});
      queue.push_back(nbr);
    }
  }
  return tree;
}

}  // namespace

void GridNetwork::validate() const {
  if (bus_count < 2) throw StructureError("network needs at least one line bus");
  const int N = n();
  for (const Line& l : lines) {
    if (l.from < 0 || l.from > N || l.to < 0 || l.to > N || l.from == l.to) {
      throw StructureError("line " + edge_name(l) + " references invalid buses");
    }
    if (l.r_ohm < 0) throw StructureError("line " + edge_name(l) + " has negative resistance");
    if (l.x_ohm <= 0) throw StructureError("line " + edge_name(l) + " has non-positive reactance (zero-impedance branches are not modeled)");
  }
  // cycle check first so cyclic files report the offending edge
  UnionFind uf(bus_count);
  for (const Line& l : lines) {
    if (!uf.unite(l.from, l.to)) {
      throw StructureError("cycle introduced by line " + edge_name(l));
    }
  }
  if (static_cast<int>(lines.size()) != N) {
    throw StructureError("not a spanning tree: " + std::to_string(lines.size()) +
                         " lines for " + std::to_string(N) + " non-substation buses");
  }
  for (int b = 1; b <= N; ++b) {
    if (uf.find(b) != uf.find(0)) {
      throw StructureError("bus " + std::to_string(b) + " unreachable from the substation");
    }
  }
  int prev = 0;
  for (int c : controllable) {
    if (c < 1 || c > N) throw StructureError("controllable bus " + std::to_string(c) + " out of range");
    if (c <= prev) throw StructureError("controllable set must be sorted and unique (bus " + std::to_string(c) + ")");
    prev = c;
  }
}

IndexMap IndexMap::build(const GridNetwork& net) {
  IndexMap m;
  m.c_buses = net.controllable;
  m.c_pos.assign(net.bus_count, -1);
  for (int i = 0; i < static_cast<int>(m.c_buses.size()); ++i) m.c_pos[m.c_buses[i]] = i;
  for (int b = 1; b <= net.n(); ++b) {
    if (m.c_pos[b] < 0) m.u_buses.push_back(b);
  }
  return m;
}

std::vector<int> IndexMap::c_rows() const {
  std::vector<int> rows(c_buses.size());
  for (std::size_t i = 0; i < c_buses.size(); ++i) rows[i] = c_buses[i] - 1;
  return rows;
}

std::vector<int> IndexMap::u_rows() const {
  std::vector<int> rows(u_buses.size());
  for (std::size_t i = 0; i < u_buses.size(); ++i) rows[i] = u_buses[i] - 1;
  return rows;
}

double spectral_norm_spd(const MatrixXd& m, double rel_tol) {
  const int n = static_cast<int>(m.rows());
  if (n == 0) return 0.0;
  VectorXd b = VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
  double lambda = 0.0;
  for (int iter = 0; iter < 200000; ++iter) {
    VectorXd w = m * b;
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    lambda = b.dot(w);
    if ((w - lambda * b).norm() <= rel_tol * std::max(std::abs(lambda), 1e-300)) {
      return lambda;
    }
    b = w / nw;
  }
  throw ConvergenceError("power iteration did not reach tolerance " + fmt_double(rel_tol));
}

SensitivityMatrices build_matrices(const GridNetwork& net) {
  net.validate();
  const int N = net.n();
  const double zb = net.z_base();

  // Reduced incidence matrix: rows are buses 1..N, columns are lines.
  // Column orientation cancels in M^{-T} D M^{-1}, so file order is kept.
  MatrixXd M = MatrixXd::Zero(N, N);
  VectorXd dr(N), dx(N);
  for (int e = 0; e < N; ++e) {
    const Line& l = net.lines[e];
    if (l.from >= 1) M(l.from - 1, e) += 1.0;
    if (l.to >= 1) M(l.to - 1, e) -= 1.0;
    dr[e] = l.r_ohm / zb;
    dx[e] = l.x_ohm / zb;
  }
  Eigen::FullPivLU<MatrixXd> lu(M);
  if (!lu.isInvertible()) {
    throw NumericError("incidence matrix is singular");
  }
  const MatrixXd A = lu.inverse();

  SensitivityMatrices out;
  out.R = A.transpose() * dr.asDiagonal() * A;
  out.X = A.transpose() * dx.asDiagonal() * A;
  out.R = ((out.R + out.R.transpose()) / 2.0).eval();
  out.X = ((out.X + out.X.transpose()) / 2.0).eval();
  out.map = IndexMap::build(net);
  const auto c_rows = out.map.c_rows();
  out.X_cc = submatrix(out.X, c_rows, c_rows);
  out.x_norm = spectral_norm_spd(out.X_cc);
  return out;
}

VectorXd assemble_q(const IndexMap& map, const VectorXd& q_u, const VectorXd& q_c) {
  if (q_u.size() != static_cast<Eigen::Index>(map.u_buses.size()) ||
      q_c.size() != static_cast<Eigen::Index>(map.c_buses.size())) {
    throw StructureError("reactive vector sizes do not match the bus split");
  }
  VectorXd q(map.u_buses.size() + map.c_buses.size());
  for (std::size_t i = 0; i < map.u_buses.size(); ++i) q[map.u_buses[i] - 1] = q_u[i];
  for (std::size_t i = 0; i < map.c_buses.size(); ++i) q[map.c_buses[i] - 1] = q_c[i];
  return q;
}

VectorXd solve_lindistflow(const SensitivityMatrices& mat, const PowerScenario& scen,
                           const VectorXd& q_c) {
  if (scen.p.size() != mat.n()) throw StructureError("scenario p size mismatch");
  const VectorXd q = assemble_q(mat.map, scen.q_uncontrolled, q_c);
  return mat.R * scen.p + mat.X * q + VectorXd::Ones(mat.n());
}

VectorXd solve_distflow(const GridNetwork& net, const PowerScenario& scen,
                        const VectorXd& q_c, const DistFlowOptions& opt) {
  const int N = net.n();
  if (scen.p.size() != N) throw StructureError("scenario p size mismatch");
  const IndexMap map = IndexMap::build(net);
  const VectorXd q = assemble_q(map, scen.q_uncontrolled, q_c);
  const OrientedTree tree = orient_tree(net);
  const int E = static_cast<int>(tree.order.size());

  std::vector<double> v2(net.bus_count, 1.0);
  std::vector<double> P(E, 0.0), Q(E, 0.0), ell(E, 0.0);
  const double collapse2 = opt.v_collapse * opt.v_collapse;

  for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
    // Backward: accumulate sending-end branch flows, leaves first.
    for (int e = E - 1; e >= 0; --e) {
      const auto& br = tree.order[e];
      double sum_p = 0.0, sum_q = 0.0;
      for (int f : tree.children[br.child]) {
        sum_p += P[f];
        sum_q += Q[f];
      }
      P[e] = -scen.p[br.child - 1] + sum_p + br.r * ell[e];
      Q[e] = -q[br.child - 1] + sum_q + br.x * ell[e];
    }
    // Forward: push squared voltages down from the substation.
    double max_dv = 0.0;
    for (int e = 0; e < E; ++e) {
      const auto& br = tree.order[e];
      const double v2_new = v2[br.parent] - 2.0 * (br.r * P[e] + br.x * Q[e]) +
                            (br.r * br.r + br.x * br.x) * ell[e];
      if (!(v2_new > collapse2)) {
        throw NumericError("voltage collapse at bus " + std::to_string(br.child) +
                           " (|v| < " + fmt_double(opt.v_collapse) + " p.u.)");
      }
      max_dv = std::max(max_dv, std::abs(std::sqrt(v2_new) - std::sqrt(v2[br.child])));
      v2[br.child] = v2_new;
    }
    for (int e = 0; e < E; ++e) {
      const auto& br = tree.order[e];
      ell[e] = (P[e] * P[e] + Q[e] * Q[e]) / v2[br.parent];
    }
    if (sweep >= 2 && max_dv < opt.tol) {
      VectorXd v(N);
      for (int b = 1; b <= N; ++b) v[b - 1] = std::sqrt(v2[b]);
      return v;
    }
  }
  throw ConvergenceError("backward-forward sweep did not converge in " +
                         std::to_string(opt.max_sweeps) + " sweeps");
}

ControlPartition partition_controllable(const SensitivityMatrices& mat,
                                        const PowerScenario& scen) {
  if (mat.map.c_buses.empty()) throw StructureError("controllable set is empty");
  const auto c = mat.map.c_rows();
  const auto u = mat.map.u_rows();
  const VectorXd p_c = subvector(scen.p, c);
  const VectorXd p_u = subvector(scen.p, u);

  ControlPartition part;
  part.x_cc = mat.X_cc;
  part.tilde_v = submatrix(mat.R, u, c).transpose() * p_u +
                 submatrix(mat.R, c, c) * p_c +
                 submatrix(mat.X, u, c).transpose() * scen.q_uncontrolled +
                 VectorXd::Ones(c.size());
  return part;
}

// --- files -------------------------------------------------------------

GridNetwork load_network(const std::string& path) {
  const std::string text = read_file(path);
  GridNetwork net;
  bool have_kv = false, have_mva = false;
  int max_bus = 0;
  int lineno = 0;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view sv(raw);
    if (auto pos = sv.find('#'); pos != std::string_view::npos) sv = sv.substr(0, pos);
    sv = trim(sv);
    if (sv.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);

    if (sv.starts_with("line")) {
      std::istringstream ls{std::string(sv)};
      std::string kw;
      Line l;
      if (!(ls >> kw >> l.from >> l.to >> l.r_ohm >> l.x_ohm)) {
        throw ParseError(where + ": expected 'line <from> <to> <r_ohm> <x_ohm>'");
      }
      std::string extra;
      if (ls >> extra) throw ParseError(where + ": trailing token '" + extra + "'");
      net.lines.push_back(l);
      max_bus = std::max({max_bus, l.from, l.to});
      continue;
    }
    const auto eq = sv.find('=');
    if (eq == std::string_view::npos) throw ParseError(where + ": expected 'key = value'");
    const std::string key{trim(sv.substr(0, eq))};
    const std::string_view val = trim(sv.substr(eq + 1));
    if (key == "base_kv") {
      net.base_kv = parse_double(val, where);
      have_kv = true;
    } else if (key == "base_mva") {
      net.base_mva = parse_double(val, where);
      have_mva = true;
    } else if (key == "controllable") {
      std::string_view body = val;
      if (body.size() < 2 || body.front() != '[' || body.back() != ']') {
        throw ParseError(where + ": controllable must be a [bus, ...] list");
      }
      body = trim(body.substr(1, body.size() - 2));
      if (!body.empty()) {
        for (const auto& tok : split(body, ',')) {
          net.controllable.push_back(static_cast<int>(parse_long(tok, where)));
        }
      }
      std::sort(net.controllable.begin(), net.controllable.end());
    } else {
      throw ParseError(where + ": unknown key '" + key + "'");
    }
  }
  if (!have_kv || !have_mva) throw ParseError(path + ": base_kv and base_mva are required");
  if (net.lines.empty()) throw ParseError(path + ": no lines");
  net.bus_count = max_bus + 1;
  try {
    net.validate();
  } catch (const StructureError& e) {
    throw StructureError(path + ": " + e.what());
  }
  return net;
}

void save_network(const GridNetwork& net, const std::string& path) {
  std::ostringstream out;
  out << "base_kv = " << fmt_double(net.base_kv) << "\n";
  out << "base_mva = " << fmt_double(net.base_mva) << "\n";
  out << "controllable = [";
  for (std::size_t i = 0; i < net.controllable.size(); ++i) {
    if (i) out << ", ";
    out << net.controllable[i];
  }
  out << "]\n\n# from  to  r_ohm  x_ohm\n";
  for (const Line& l : net.lines) {
    out << "line " << l.from << " " << l.to << " " << fmt_double(l.r_ohm) << " "
        << fmt_double(l.x_ohm) << "\n";
  }
  write_file(path, out.str());
}

std::vector<PowerScenario> load_scenarios(const std::string& path, const GridNetwork& net) {
  const std::string text = read_file(path);
  const IndexMap map = IndexMap::build(net);
  const int N = net.n();
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;

  // header
  std::vector<int> p_col_bus, q_col_bus;  // per column: bus id or -1
  while (std::getline(in, raw)) {
    ++lineno;
    if (trim(raw).empty() || trim(raw).front() == '#') continue;
    break;
  }
  const std::string hwhere = path + ":" + std::to_string(lineno);
  const auto header = split(trim(raw), ',');
  if (header.empty() || trim(header[0]) != "timestamp") {
    throw ParseError(hwhere + ": first column must be 'timestamp'");
  }
  std::vector<char> p_seen(net.bus_count, 0), q_seen(net.bus_count, 0);
  std::vector<std::pair<char, int>> cols;  // ('p'|'q', bus)
  for (std::size_t i = 1; i < header.size(); ++i) {
    const std::string name{trim(header[i])};
    char kind;
    int bus;
    if (name.starts_with("p_bus")) {
      kind = 'p';
      bus = static_cast<int>(parse_long(name.substr(5), hwhere));
    } else if (name.starts_with("q_bus")) {
      kind = 'q';
      bus = static_cast<int>(parse_long(name.substr(5), hwhere));
    } else {
      throw ParseError(hwhere + ": unknown column '" + name + "'");
    }
    if (bus < 1 || bus > N) throw ParseError(hwhere + ": column '" + name + "' out of range");
    auto& seen = (kind == 'p') ? p_seen : q_seen;
    if (seen[bus]) throw ParseError(hwhere + ": duplicate column '" + name + "'");
    seen[bus] = 1;
    if (kind == 'q' && map.c_pos[bus] >= 0) {
      throw ParseError(hwhere + ": q_bus" + std::to_string(bus) +
                       " is controllable; its reactive power is not a profile input");
    }
    cols.push_back({kind, bus});
  }
  for (int b = 1; b <= N; ++b) {
    if (!p_seen[b]) throw ParseError(hwhere + ": missing column p_bus" + std::to_string(b));
  }
  for (int b : map.u_buses) {
    if (!q_seen[b]) throw ParseError(hwhere + ": missing column q_bus" + std::to_string(b));
  }

  std::vector<PowerScenario> out;
  std::vector<int> u_index(net.bus_count, -1);
  for (std::size_t i = 0; i < map.u_buses.size(); ++i) u_index[map.u_buses[i]] = static_cast<int>(i);
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string_view sv = trim(raw);
    if (sv.empty() || sv.front() == '#') continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto fields = split(sv, ',');
    if (fields.size() != cols.size() + 1) {
      throw ParseError(where + ": expected " + std::to_string(cols.size() + 1) +
                       " fields, got " + std::to_string(fields.size()));
    }
    PowerScenario s;
    s.label = std::string(trim(fields[0]));
    s.p = VectorXd::Zero(N);
    s.q_uncontrolled = VectorXd::Zero(map.u_buses.size());
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const double mw = parse_double(fields[i + 1], where);
      const double pu = mw / net.base_mva;
      if (cols[i].first == 'p') {
        s.p[cols[i].second - 1] = pu;
      } else {
        s.q_uncontrolled[u_index[cols[i].second]] = pu;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_scenarios(std::span<const PowerScenario> scenarios, const GridNetwork& net,
                    const std::string& path) {
  const IndexMap map = IndexMap::build(net);
  std::ostringstream out;
  out << "timestamp";
  for (int b = 1; b <= net.n(); ++b) out << ",p_bus" << b;
  for (int b : map.u_buses) out << ",q_bus" << b;
  out << "\n";
  for (const PowerScenario& s : scenarios) {
    out << s.label;
    for (int i = 0; i < s.p.size(); ++i) out << "," << fmt_double(s.p[i] * net.base_mva);
    for (int i = 0; i < s.q_uncontrolled.size(); ++i) {
      out << "," << fmt_double(s.q_uncontrolled[i] * net.base_mva);
    }
    out << "\n";
  }
  write_file(path, out.str());
}

}  // namespace vvc
