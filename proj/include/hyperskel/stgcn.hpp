#pragma once

// Spatio-temporal graph convolution over multi-part skeleton sequences.
//
// Activations use the (N, T, V, C) layout. Frame masks are (N, T) vectors of
// 0/1 with the valid frames first; padded frames are held at zero so they act
// exactly like the convolution's own zero padding.

#include <array>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "hyperskel/graph.hpp"
#include "hyperskel/nn_ops.hpp"
#include "hyperskel/param.hpp"
#include "hyperskel/tensor.hpp"

namespace hyperskel {

inline constexpr std::size_t kNumParts = 4;
inline const std::array<std::string, kNumParts> kPartNames{"body", "left", "right", "face"};

/// Body joint that anchors each part's residual context: wrists for the
/// hands, head for the face. The body itself has none.
inline constexpr std::array<std::size_t, kNumParts> kBodyAnchor{0, 7, 8, 1};

struct Norm {
  Tensor gamma, beta;
  BatchNormState state;

  Norm() = default;
  explicit Norm(std::size_t channels);
  Tensor operator()(const Tensor& x, bool training, std::span<const double> row_mask) ;
};

/// ReLU(BN(sum_k A_k (x W_k) + b)).
struct SpatialGcn {
  Tensor W;  // (K, C_in, C_out)
  Tensor b;  // (C_out)
  Norm norm;
  bool use_norm = true;

  SpatialGcn() = default;
  SpatialGcn(std::size_t K, std::size_t c_in, std::size_t c_out, std::mt19937_64& rng);
};

/// x (N, T, V, C_in), A (K, V, V). `row_mask` has one entry per (n, t, v).
Tensor spatial_gcn(const Tensor& x, const Tensor& A, SpatialGcn& layer, bool training,
                   std::span<const double> row_mask = {});

struct StgcnBlock {
  SpatialGcn gcn;
  Tensor W_t, b_t;  // (3, C, C), (C)
  Norm tnorm;
  /// 1x1 strided projection when the shape changes; identity otherwise.
  bool project_residual = false;
  Tensor W_res, b_res;  // (1, C_in, C_out), (C_out)
  std::size_t stride = 1;

  StgcnBlock() = default;
  StgcnBlock(std::size_t K, std::size_t c_in, std::size_t c_out, std::size_t stride,
             std::mt19937_64& rng);
  void set_use_norm(bool flag);
};

/// Output time length is ceil(T / stride). `frame_mask` is (N*T) and the mask
/// of the output frames is written to `out_mask`.
Tensor stgcn_block(const Tensor& x, const Tensor& A, StgcnBlock& block, bool training,
                   const std::vector<double>& frame_mask, std::vector<double>& out_mask);

struct PartEncoder {
  SkeletonGraph graph;
  Tensor W_in, b_in;  // (2, C), (C)
  std::vector<StgcnBlock> blocks;

  PartEncoder() = default;
  /// Two blocks of width d_gcn; the second one halves the frame rate.
  PartEncoder(const std::string& layout, AdjacencyStrategy strategy, std::size_t d_gcn,
              std::mt19937_64& rng);
  void set_use_norm(bool flag);
  void collect(const std::string& prefix, std::vector<NamedParam>& params,
               std::vector<NamedBuffer>& buffers);
};

struct PartFeatures {
  /// Joint-averaged features per part, (N, T', d_gcn).
  std::array<Tensor, kNumParts> Z;
  /// Temporal mean over valid frames, (N, d_gcn).
  std::array<Tensor, kNumParts> pooled;
  /// (N*T') validity of the output frames.
  std::vector<double> frame_mask;
  std::size_t frames = 0;
};

/// keypoints[p] (N, T, V_p, 2); frame_mask (N*T), empty meaning all valid.
/// The body is encoded first; its first-block features at each part's anchor
/// joint are added, detached, to that part's stream before the second block.
PartFeatures encode_parts(const std::array<Tensor, kNumParts>& keypoints,
                          std::array<PartEncoder, kNumParts>& encoders, bool training,
                          const std::vector<double>& frame_mask = {});

/// Concatenates the parts' Z along the feature axis, then x W + b.
/// W (P * d_gcn, d_model).
Tensor fuse_for_decoder(const std::array<Tensor, kNumParts>& Z, const Tensor& W, const Tensor& b);

}  // namespace hyperskel
