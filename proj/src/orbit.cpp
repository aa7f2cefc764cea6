#include "scalegmn/orbit.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace scalegmn {

OrbitElement identity_orbit(const std::vector<Index>& widths) {
  OrbitElement g;
  for (std::size_t l = 1; l + 1 < widths.size(); ++l) {
    IndexList p(static_cast<std::size_t>(widths[l]));
    std::iota(p.begin(), p.end(), Index{0});
    g.perm.push_back(std::move(p));
    g.scale.push_back(Eigen::VectorXd::Ones(widths[l]));
  }
  return g;
}

OrbitElement compose(const OrbitElement& second, const OrbitElement& first) {
  if (second.hidden_layers() != first.hidden_layers()) {
    throw ShapeError("compose: orbit elements for different architectures");
  }
  OrbitElement out;
  for (std::size_t l = 0; l < first.hidden_layers(); ++l) {
    const IndexList& p1 = first.perm[l];
    const IndexList& p2 = second.perm[l];
    IndexList p(p1.size());
    Eigen::VectorXd q(static_cast<Index>(p1.size()));
    for (std::size_t i = 0; i < p1.size(); ++i) {
      p[i] = p2[static_cast<std::size_t>(p1[i])];
      q[static_cast<Index>(i)] = first.scale[l][static_cast<Index>(i)] * second.scale[l][p1[i]];
    }
    out.perm.push_back(std::move(p));
    out.scale.push_back(std::move(q));
  }
  return out;
}

OrbitElement inverse(const OrbitElement& g) {
  OrbitElement out;
  for (std::size_t l = 0; l < g.hidden_layers(); ++l) {
    const IndexList& p = g.perm[l];
    IndexList inv(p.size());
    Eigen::VectorXd q(static_cast<Index>(p.size()));
    for (std::size_t i = 0; i < p.size(); ++i) {
      inv[static_cast<std::size_t>(p[i])] = static_cast<Index>(i);
      q[p[i]] = 1.0 / g.scale[l][static_cast<Index>(i)];
    }
    out.perm.push_back(std::move(inv));
    out.scale.push_back(std::move(q));
  }
  return out;
}

namespace {

bool in_group(GroupKind k, double q) {
  switch (k) {
    case GroupKind::None: return q == 1.0;
    case GroupKind::Positive: return q > 0.0;
    case GroupKind::Sign: return q == 1.0 || q == -1.0;
  }
  return false;
}

}  // namespace

void check_orbit(const OrbitElement& g, const std::vector<Index>& widths,
                 const std::vector<GroupKind>& groups) {
  const std::size_t hidden = widths.size() < 2 ? 0 : widths.size() - 2;
  if (g.hidden_layers() != hidden || g.scale.size() != hidden || groups.size() != hidden) {
    throw ShapeError("orbit element has " + std::to_string(g.hidden_layers()) +
                     " hidden layers, network has " + std::to_string(hidden));
  }
  for (std::size_t l = 0; l < hidden; ++l) {
    const auto d = static_cast<std::size_t>(widths[l + 1]);
    if (g.perm[l].size() != d || static_cast<std::size_t>(g.scale[l].size()) != d) {
      throw ShapeError("orbit element width mismatch at hidden layer " + std::to_string(l + 1));
    }
    std::vector<bool> seen(d, false);
    for (Index p : g.perm[l]) {
      if (p < 0 || static_cast<std::size_t>(p) >= d || seen[static_cast<std::size_t>(p)]) {
        throw Error("orbit permutation at hidden layer " + std::to_string(l + 1) +
                    " is not a bijection");
      }
      seen[static_cast<std::size_t>(p)] = true;
    }
    for (Index i = 0; i < g.scale[l].size(); ++i) {
      if (!in_group(groups[l], g.scale[l][i])) {
        throw Error("multiplier " + std::to_string(g.scale[l][i]) + " at hidden layer " +
                    std::to_string(l + 1) + " is outside the " +
                    std::string(to_string(groups[l])) + " group");
      }
    }
  }
}

std::vector<GroupKind> hidden_groups(const FfnnParams& net) {
  std::vector<GroupKind> g;
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) g.push_back(net.layers[l].activation.group());
  return g;
}

FfnnParams apply_orbit(const FfnnParams& net, const OrbitElement& g) {
  net.validate();
  const auto widths = net.widths();
  check_orbit(g, widths, hidden_groups(net));
  FfnnParams out = net;
  const std::size_t L = net.layers.size();
  for (std::size_t l = 1; l <= L; ++l) {
    const Tensor& w = net.layers[l - 1].weight;
    const Tensor& b = net.layers[l - 1].bias;
    Tensor& w2 = out.layers[l - 1].weight;
    Tensor& b2 = out.layers[l - 1].bias;
    const bool row_act = l < L;
    const bool col_act = l > 1;
    for (Index i = 0; i < w.rows(); ++i) {
      const Index ni = row_act ? g.perm[l - 1][static_cast<std::size_t>(i)] : i;
      const double qi = row_act ? g.scale[l - 1][i] : 1.0;
      b2(0, ni) = qi * b(0, i);
      for (Index j = 0; j < w.cols(); ++j) {
        const Index nj = col_act ? g.perm[l - 2][static_cast<std::size_t>(j)] : j;
        const double qj = col_act ? g.scale[l - 2][j] : 1.0;
        w2(ni, nj) = qi * w(i, j) / qj;
      }
    }
  }
  return out;
}

OrbitElement sample_orbit(const OrbitSampling& spec, const std::vector<Index>& widths, Rng& rng) {
  if (spec.group == GroupKind::Positive && !(spec.lambda > 0.0)) {
    throw Error("sample_orbit: positive group needs lambda > 0");
  }
  OrbitElement g = identity_orbit(widths);
  std::exponential_distribution<double> expo(spec.group == GroupKind::Positive ? spec.lambda : 1.0);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t l = 0; l < g.hidden_layers(); ++l) {
    if (spec.permute) std::shuffle(g.perm[l].begin(), g.perm[l].end(), rng);
    for (Index i = 0; i < g.scale[l].size(); ++i) {
      switch (spec.group) {
        case GroupKind::None: break;
        case GroupKind::Sign: g.scale[l][i] = coin(rng) ? 1.0 : -1.0; break;
        case GroupKind::Positive: {
          double q = expo(rng);
          while (q < 1e-6) q = expo(rng);
          g.scale[l][i] = q;
          break;
        }
      }
    }
  }
  return g;
}

OrbitElement sample_orbit(const FfnnParams& net, double lambda, bool permute, Rng& rng) {
  const auto groups = hidden_groups(net);
  OrbitSampling spec{groups.empty() ? GroupKind::None : groups.front(), lambda, permute};
  for (GroupKind k : groups) {
    if (k != spec.group) throw Error("sample_orbit: mixed hidden-layer groups need explicit sampling");
  }
  return sample_orbit(spec, net.widths(), rng);
}

}  // namespace scalegmn
