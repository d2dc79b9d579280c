#include "hyperskel/stgcn.hpp"

#include <algorithm>
#include <cmath>

namespace hyperskel {

namespace {

bool all_valid(const std::vector<double>& m) {
  return std::all_of(m.begin(), m.end(), [](double v) { return v != 0.0; });
}

// (N*T) frame mask -> (N, T, 1, 1) multiplier.
Tensor frame_tensor(const std::vector<double>& m, std::size_t N, std::size_t T) {
  return Tensor({N, T, 1, 1}, m);
}

// Repeats each frame entry once per joint.
std::vector<double> rows_of(const std::vector<double>& frame_mask, std::size_t V) {
  std::vector<double> r;
  r.reserve(frame_mask.size() * V);
  for (double m : frame_mask) r.insert(r.end(), V, m);
  return r;
}

Tensor init_weight(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  return Tensor::randn(std::move(shape), rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace

Norm::Norm(std::size_t channels)
    : gamma(Tensor::ones({channels})), beta(Tensor::zeros({channels})), state(channels) {}

Tensor Norm::operator()(const Tensor& x, bool training, std::span<const double> row_mask) {
  return batch_norm(x, gamma, beta, state, training, row_mask);
}

SpatialGcn::SpatialGcn(std::size_t K, std::size_t c_in, std::size_t c_out, std::mt19937_64& rng)
    : W(init_weight({K, c_in, c_out}, c_in, rng)), b(Tensor::zeros({c_out})), norm(c_out) {}

Tensor spatial_gcn(const Tensor& x, const Tensor& A, SpatialGcn& layer, bool training,
                   std::span<const double> row_mask) {
  if (x.rank() != 4 || A.rank() != 3 || A.dim(1) != x.dim(2) || A.dim(2) != x.dim(2)) {
    throw DimensionError("spatial_gcn: input " + shape_str(x.shape()) + " vs adjacency " +
                         shape_str(A.shape()));
  }
  const std::size_t K = A.dim(0), V = x.dim(2), c_in = x.dim(3);
  if (layer.W.rank() != 3 || layer.W.dim(0) != K || layer.W.dim(1) != c_in) {
    throw DimensionError("spatial_gcn: weights " + shape_str(layer.W.shape()) + " vs input " +
                         shape_str(x.shape()) + " with " + std::to_string(K) + " kernels");
  }
  const std::size_t c_out = layer.W.dim(2);
  Tensor y;
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor Wk = reshape(slice(layer.W, 0, k, 1), {c_in, c_out});
    const Tensor Ak = reshape(slice(A, 0, k, 1), {V, V});
    // Mix before or after the channel map, whichever is narrower.
    const Tensor yk = c_in <= c_out ? linear(mix_nodes(x, Ak), Wk) : mix_nodes(linear(x, Wk), Ak);
    y = k == 0 ? yk : y + yk;
  }
  y = y + layer.b;
  if (layer.use_norm) {
    y = layer.norm(y, training, row_mask);
  } else if (!row_mask.empty()) {
    y = y * Tensor({x.dim(0), x.dim(1), V, 1}, std::vector<double>(row_mask.begin(), row_mask.end()));
  }
  return relu(y);
}

StgcnBlock::StgcnBlock(std::size_t K, std::size_t c_in, std::size_t c_out, std::size_t stride_,
                       std::mt19937_64& rng)
    : gcn(K, c_in, c_out, rng),
      W_t(init_weight({3, c_out, c_out}, 3 * c_out, rng)),
      b_t(Tensor::zeros({c_out})),
      tnorm(c_out),
      project_residual(c_in != c_out || stride_ != 1),
      stride(stride_) {
  if (project_residual) {
    W_res = init_weight({1, c_in, c_out}, c_in, rng);
    b_res = Tensor::zeros({c_out});
  }
}

void StgcnBlock::set_use_norm(bool flag) { gcn.use_norm = flag; }

Tensor stgcn_block(const Tensor& x, const Tensor& A, StgcnBlock& block, bool training,
                   const std::vector<double>& frame_mask, std::vector<double>& out_mask) {
  const std::size_t N = x.dim(0), T = x.dim(1), V = x.dim(2);
  if (frame_mask.size() != N * T) {
    throw DimensionError("stgcn_block: frame mask of size " + std::to_string(frame_mask.size()) +
                         " for input " + shape_str(x.shape()));
  }
  const bool dense = all_valid(frame_mask);
  const std::size_t To = (T - 1) / block.stride + 1;
  out_mask.assign(N * To, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t t = 0; t < To; ++t) out_mask[n * To + t] = frame_mask[n * T + t * block.stride];
  }
  const std::vector<double> rows_in = dense ? std::vector<double>{} : rows_of(frame_mask, V);
  const std::vector<double> rows_out = dense ? std::vector<double>{} : rows_of(out_mask, V);

  const Tensor y = spatial_gcn(x, A, block.gcn, training, rows_in);
  Tensor z = temporal_conv(y, block.W_t, block.b_t, block.stride, 1);
  if (block.gcn.use_norm) {
    z = block.tnorm(z, training, rows_out);
  }
  const Tensor res =
      block.project_residual ? temporal_conv(x, block.W_res, block.b_res, block.stride, 0) : x;
  Tensor out = relu(z + res);
  if (!dense) out = out * frame_tensor(out_mask, N, To);
  return out;
}

PartEncoder::PartEncoder(const std::string& layout, AdjacencyStrategy strategy, std::size_t d_gcn,
                         std::mt19937_64& rng)
    : graph(build_graph(layout, strategy)),
      W_in(init_weight({2, d_gcn}, 2, rng)),
      b_in(Tensor::zeros({d_gcn})) {
  const std::size_t K = graph.A.dim(0);
  blocks.emplace_back(K, d_gcn, d_gcn, 1, rng);
  blocks.emplace_back(K, d_gcn, d_gcn, 2, rng);
}

void PartEncoder::set_use_norm(bool flag) {
  for (auto& b : blocks) b.set_use_norm(flag);
}

void PartEncoder::collect(const std::string& prefix, std::vector<NamedParam>& params,
                          std::vector<NamedBuffer>& buffers) {
  params.push_back({prefix + ".in.W", &W_in});
  params.push_back({prefix + ".in.b", &b_in});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    const std::string p = prefix + ".block" + std::to_string(i);
    params.push_back({p + ".gcn.W", &b.gcn.W});
    params.push_back({p + ".gcn.b", &b.gcn.b});
    params.push_back({p + ".gcn.gamma", &b.gcn.norm.gamma});
    params.push_back({p + ".gcn.beta", &b.gcn.norm.beta});
    params.push_back({p + ".tcn.W", &b.W_t});
    params.push_back({p + ".tcn.b", &b.b_t});
    params.push_back({p + ".tcn.gamma", &b.tnorm.gamma});
    params.push_back({p + ".tcn.beta", &b.tnorm.beta});
    if (b.project_residual) {
      params.push_back({p + ".res.W", &b.W_res});
      params.push_back({p + ".res.b", &b.b_res});
    }
    buffers.push_back({p + ".gcn.running_mean", &b.gcn.norm.state.running_mean});
    buffers.push_back({p + ".gcn.running_var", &b.gcn.norm.state.running_var});
    buffers.push_back({p + ".tcn.running_mean", &b.tnorm.state.running_mean});
    buffers.push_back({p + ".tcn.running_var", &b.tnorm.state.running_var});
  }
}

PartFeatures encode_parts(const std::array<Tensor, kNumParts>& keypoints,
                          std::array<PartEncoder, kNumParts>& encoders, bool training,
                          const std::vector<double>& frame_mask) {
  const Tensor& body = keypoints[0];
  if (body.rank() != 4 || body.dim(1) == 0) {
    throw DimensionError("encode_parts: need (N, T, V, 2) keypoints with T > 0, got " +
                         shape_str(body.shape()));
  }
  const std::size_t N = body.dim(0), T = body.dim(1);
  for (std::size_t p = 0; p < kNumParts; ++p) {
    const auto& kp = keypoints[p];
    if (kp.rank() != 4 || kp.dim(0) != N || kp.dim(1) != T || kp.dim(3) != 2 ||
        kp.dim(2) != encoders[p].graph.num_nodes) {
      throw DimensionError("encode_parts: " + kPartNames[p] + " keypoints " + shape_str(kp.shape()) +
                           " do not match the " + encoders[p].graph.layout + " layout");
    }
  }
  std::vector<double> mask = frame_mask.empty() ? std::vector<double>(N * T, 1.0) : frame_mask;
  if (mask.size() != N * T) {
    throw DimensionError("encode_parts: frame mask of size " + std::to_string(mask.size()));
  }
  const bool dense = all_valid(mask);

  PartFeatures out;
  Tensor body_ctx;
  for (std::size_t p = 0; p < kNumParts; ++p) {
    auto& enc = encoders[p];
    const Tensor& A = enc.graph.A;
    Tensor x = linear(keypoints[p], enc.W_in, enc.b_in);
    if (!dense) x = x * frame_tensor(mask, N, T);
    std::vector<double> m1, m2;
    Tensor h = stgcn_block(x, A, enc.blocks[0], training, mask, m1);
    if (p == 0) {
      body_ctx = h.detach();
    } else {
      h = h + slice(body_ctx, 2, kBodyAnchor[p], 1);
    }
    h = stgcn_block(h, A, enc.blocks[1], training, m1, m2);
    out.Z[p] = mean(h, 2);
    out.frames = h.dim(1);
    out.frame_mask = m2;
    const Tensor fm({N, out.frames, 1}, m2);
    out.pooled[p] = sum(out.Z[p] * fm, 1) / clamp_min(sum(fm, 1), 1.0);
  }
  return out;
}

Tensor fuse_for_decoder(const std::array<Tensor, kNumParts>& Z, const Tensor& W, const Tensor& b) {
  for (const auto& z : Z) {
    if (z.rank() != 3 || z.dim(0) != Z[0].dim(0) || z.dim(1) != Z[0].dim(1)) {
      throw DimensionError("fuse_for_decoder: part features " + shape_str(z.shape()) + " vs " +
                           shape_str(Z[0].shape()));
    }
  }
  return linear(concat({Z.begin(), Z.end()}, -1), W, b);
}

}  // namespace hyperskel
