#pragma once

#include <vector>

#include "scalegmn/activation.hpp"
#include "scalegmn/ffnn.hpp"
#include "scalegmn/random.hpp"

namespace scalegmn {

/// (P_l, Q_l) for every hidden layer l = 1..L-1. Entry l-1 of each vector
/// belongs to hidden layer l; layers 0 and L are fixed to the identity.
/// perm[i] is the new position of old neuron i, scale[i] its multiplier, so
/// b'[perm[i]] = scale[i] * b[i].
struct OrbitElement {
  std::vector<IndexList> perm;
  std::vector<Eigen::VectorXd> scale;

  [[nodiscard]] std::size_t hidden_layers() const { return perm.size(); }
};

OrbitElement identity_orbit(const std::vector<Index>& widths);

/// Element equivalent to applying `first` and then `second`.
OrbitElement compose(const OrbitElement& second, const OrbitElement& first);

OrbitElement inverse(const OrbitElement& g);

/// Throws Error when g does not match the widths or a multiplier lies outside
/// the group of the hidden layer's activation.
void check_orbit(const OrbitElement& g, const std::vector<Index>& widths,
                 const std::vector<GroupKind>& groups);

FfnnParams apply_orbit(const FfnnParams& net, const OrbitElement& g);

struct OrbitSampling {
  GroupKind group = GroupKind::Sign;
  double lambda = 1.0;   // Exponential rate for the positive group
  bool permute = true;
};

/// Sign: uniform +-1. Positive: i.i.d. Exponential(lambda), resampled below
/// 1e-6. None: all ones. Permutations uniform when `permute`, else identity.
OrbitElement sample_orbit(const OrbitSampling& spec, const std::vector<Index>& widths, Rng& rng);

/// Group of each hidden layer l = 1..L-1 of a network.
std::vector<GroupKind> hidden_groups(const FfnnParams& net);

/// Sampling with the network's own hidden-layer group (uniform across layers
/// is assumed for the positive rate).
OrbitElement sample_orbit(const FfnnParams& net, double lambda, bool permute, Rng& rng);

}  // namespace scalegmn
