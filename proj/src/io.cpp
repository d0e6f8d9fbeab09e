// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#include "kfade/io.hpp"

#include <algorithm>
#include <json.hpp>

namespace kfade {

using nlohmann::json;

namespace {

json network_to_json(const NetworkSpec& net) {
  json layers = json::array();
  for (const LayerSpec& l : net.layers) {
    layers.push_back({{"name", l.name},
                      {"d_in", l.d_in},
                      {"d_out", l.d_out},
                      {"nonlinearity", to_string(l.activation)}});
  }
  return layers;
}

NetworkSpec network_from_json(const json& layers) {
  NetworkSpec net;
  for (const json& l : layers) {
    net.layers.push_back({l.at("name").get<std::string>(), l.at("d_in").get<int>(),
                          l.at("d_out").get<int>(),
                          nonlinearity_from_string(
                              l.at("nonlinearity").get<std::string>())});
  }
  net.validate();
  return net;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& net,
                     const Checkpoint& ckpt) {
  validate_checkpoint(net, ckpt);
  std::vector<TensorEntry> entries;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    entries.push_back(matrix_entry(net.layers[l].name + "/W", ckpt.weights[l]));
  }
  json meta;
  meta["layers"] = network_to_json(net);
  meta["seed"] = ckpt.seed;
  meta["steps"] = ckpt.steps;
  meta["provenance"] = ckpt.provenance;
  entries.push_back(string_entry("__meta__", meta.dump()));
  write_container(path, entries);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const std::vector<TensorEntry> entries = read_container(path);
  json meta;
  try {
    meta = json::parse(entry_to_string(find_entry(entries, "__meta__")));
  } catch (const json::exception& e) {
    throw Error::io("checkpoint metadata is not valid JSON: " +
                    std::string(e.what()));
  }
  LoadedCheckpoint out;
  out.net = network_from_json(meta.at("layers"));
  out.checkpoint.seed = meta.at("seed").get<std::uint64_t>();
  out.checkpoint.steps = meta.at("steps").get<std::int64_t>();
  out.checkpoint.provenance = meta.at("provenance").get<std::string>();
  for (const LayerSpec& l : out.net.layers) {
    out.checkpoint.weights.push_back(
        entry_to_matrix(find_entry(entries, l.name + "/W")));
  }
  validate_checkpoint(out.net, out.checkpoint);
  return out;
}

void save_curvature(const std::filesystem::path& path, const NetworkSpec& net,
                    const CurvatureState& state) {
  std::vector<TensorEntry> entries;
  for (std::size_t t = 0; t < state.target_layers.size(); ++t) {
    const std::string& name = state.target_layers[t];
    switch (state.kind) {
      case EstimatorKind::identity:
        break;
      case EstimatorKind::diagonal:
        entries.push_back(matrix_entry(name + "/diag", state.diagonal[t]));
        break;
      case EstimatorKind::kfac:
      case EstimatorKind::ekfac: {
        const KfacLayerState& ls = state.kfac[t];
        entries.push_back(matrix_entry(name + "/A", ls.A));
        entries.push_back(matrix_entry(name + "/S", ls.S));
        entries.push_back(matrix_entry(name + "/QA", ls.eig_a.q));
        entries.push_back(matrix_entry(name + "/QS", ls.eig_s.q));
        entries.push_back(vector_entry(name + "/lamA", ls.eig_a.eigenvalues));
        entries.push_back(vector_entry(name + "/lamS", ls.eig_s.eigenvalues));
        if (state.kind == EstimatorKind::ekfac) {
          entries.push_back(matrix_entry(name + "/lambda_corr", ls.lambda_corr));
        }
        break;
      }
      case EstimatorKind::exact_dense:
        entries.push_back(matrix_entry(name + "/dense", state.dense[t]));
        break;
    }
  }
  json meta;
  meta["estimator"] = to_string(state.kind);
  meta["fisher_mode"] = state.mode.exact ? "exact_enumeration" : "monte_carlo";
  meta["mc_samples"] = state.mode.mc_samples;
  meta["target_layers"] = state.target_layers;
  meta["fit_fingerprint"] = state.fit_fingerprint;
  json counts = json::array();
  for (const KfacLayerState& ls : state.kfac) {
    counts.push_back({{"rows_a", ls.rows_a}, {"rows_s", ls.rows_s}});
  }
  meta["kfac_counts"] = counts;
  entries.push_back(string_entry("__meta__", meta.dump()));
  write_container(path, entries);
}

CurvatureState load_curvature(const std::filesystem::path& path,
                              const NetworkSpec& net) {
  const std::vector<TensorEntry> entries = read_container(path);
  json meta;
  try {
    meta = json::parse(entry_to_string(find_entry(entries, "__meta__")));
  } catch (const json::exception& e) {
    throw Error::io("curvature metadata is not valid JSON: " +
                    std::string(e.what()));
  }

  CurvatureState state;
  state.kind = estimator_from_string(meta.at("estimator").get<std::string>());
  state.mode.exact = meta.at("fisher_mode").get<std::string>() == "exact_enumeration";
  state.mode.mc_samples = meta.at("mc_samples").get<int>();
  state.target_layers = meta.at("target_layers").get<std::vector<std::string>>();
  state.fit_fingerprint = meta.at("fit_fingerprint").get<std::uint64_t>();
  for (const std::string& name : state.target_layers) {
    state.layer_indices.push_back(net.layer_index(name));
  }

  for (std::size_t t = 0; t < state.target_layers.size(); ++t) {
    const std::string& name = state.target_layers[t];
    switch (state.kind) {
      case EstimatorKind::identity:
        break;
      case EstimatorKind::diagonal:
        state.diagonal.push_back(entry_to_matrix(find_entry(entries, name + "/diag")));
        break;
      case EstimatorKind::kfac:
      case EstimatorKind::ekfac: {
        KfacLayerState ls;
        ls.A = entry_to_matrix(find_entry(entries, name + "/A"));
        ls.S = entry_to_matrix(find_entry(entries, name + "/S"));
        ls.eig_a.q = entry_to_matrix(find_entry(entries, name + "/QA"));
        ls.eig_s.q = entry_to_matrix(find_entry(entries, name + "/QS"));
        ls.eig_a.eigenvalues = entry_to_vector(find_entry(entries, name + "/lamA"));
        ls.eig_s.eigenvalues = entry_to_vector(find_entry(entries, name + "/lamS"));
        if (state.kind == EstimatorKind::ekfac) {
          ls.lambda_corr =
              entry_to_matrix(find_entry(entries, name + "/lambda_corr"));
        }
        // Stored eigendecompositions must still reconstruct the factors.
        const auto check_reconstruction = [&](const Matrix& m, const SymEigen& e) {
          const Matrix rebuilt = e.q * e.eigenvalues.asDiagonal() * e.q.transpose();
          if ((rebuilt - m).norm() > 1e-8 * std::max(1.0, m.norm())) {
            throw Error::io("curvature entry '" + name +
                            "' has inconsistent eigendecomposition");
          }
        };
        check_reconstruction(ls.A, ls.eig_a);
        check_reconstruction(ls.S, ls.eig_s);
        const json& counts = meta.at("kfac_counts").at(t);
        ls.rows_a = counts.at("rows_a").get<std::int64_t>();
        ls.rows_s = counts.at("rows_s").get<std::int64_t>();
        state.kfac.push_back(std::move(ls));
        break;
      }
      case EstimatorKind::exact_dense:
        state.dense.push_back(entry_to_matrix(find_entry(entries, name + "/dense")));
        break;
    }
  }
  return state;
}

}  // namespace kfade
