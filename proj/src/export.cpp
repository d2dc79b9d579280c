#include "hyperskel/export.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace hyperskel {

namespace {

constexpr std::array<const char*, kNumParts> kColors{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"};

}  // namespace

std::vector<std::array<double, 2>> pca_to_disk(const std::vector<double>& rows, std::size_t d) {
  if (d == 0 || rows.size() % d != 0) throw DimensionError("pca_to_disk: ragged rows");
  const std::size_t n = rows.size() / d;
  std::vector<std::array<double, 2>> out(n, {0.0, 0.0});
  if (n == 0) return out;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
      rows.data(), Eigen::Index(n), Eigen::Index(d));
  const Eigen::MatrixXd centered = X.rowwise() - X.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / double(std::max<std::size_t>(n - 1, 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues come in increasing order.
  Eigen::MatrixXd axes = Eigen::MatrixXd::Zero(Eigen::Index(d), 2);
  for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, Eigen::Index(d)); ++k) {
    axes.col(k) = eig.eigenvectors().col(Eigen::Index(d) - 1 - k);
  }
  const Eigen::MatrixXd proj = centered * axes;
  double max_norm = 0.0;
  for (Eigen::Index i = 0; i < proj.rows(); ++i) max_norm = std::max(max_norm, proj.row(i).norm());
  const double scale = max_norm > 0.0 ? 1.0 / (1.05 * max_norm) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = {proj(Eigen::Index(i), 0) * scale, proj(Eigen::Index(i), 1) * scale};
  }
  return out;
}

ExportResult export_embeddings(Model& model, const SyntheticDataset& data,
                               const std::vector<std::size_t>& indices,
                               const std::string& csv_path, const std::string& svg_path) {
  const std::size_t d = model.config().d_hyp;
  const Tensor c = model.ball.c_tensor().detach();
  std::vector<double> tangent, radius;
  std::vector<std::size_t> ids;
  std::vector<int> labels;
  for (std::size_t start = 0; start < indices.size(); start += 32) {
    const std::vector<std::size_t> chunk(
        indices.begin() + std::ptrdiff_t(start),
        indices.begin() + std::ptrdiff_t(std::min(indices.size(), start + 32)));
    const Batch batch = make_batch(data, chunk);
    const Tensor parts = model.encode(batch, false).first.detach();
    const auto t = logmap0(parts, c).to_vector();
    const auto r = dist0(parts, c).to_vector();
    tangent.insert(tangent.end(), t.begin(), t.end());
    radius.insert(radius.end(), r.begin(), r.end());
    for (std::size_t b = 0; b < batch.size; ++b) {
      ids.push_back(batch.sample_ids[b]);
      labels.push_back(batch.labels[b]);
    }
  }
  const auto disk = pca_to_disk(tangent, d);

  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path);
  csv << "sample_id,label,part,radius";
  for (std::size_t k = 0; k < d; ++k) csv << ",t" << k;
  csv << ",pca_x,pca_y\n";
  ExportResult res;
  for (std::size_t s = 0; s < ids.size(); ++s) {
    for (std::size_t p = 0; p < kNumParts; ++p) {
      const std::size_t row = s * kNumParts + p;
      csv << ids[s] << ',' << labels[s] << ',' << kPartNames[p] << ',' << format_double(radius[row]);
      for (std::size_t k = 0; k < d; ++k) csv << ',' << format_double(tangent[row * d + k]);
      csv << ',' << format_double(disk[row][0]) << ',' << format_double(disk[row][1]) << '\n';
      res.mean_radius[p] += radius[row];
      ++res.rows;
    }
  }
  if (!csv) throw std::runtime_error("failed writing " + csv_path);
  for (auto& r : res.mean_radius) r /= double(std::max<std::size_t>(ids.size(), 1));

  if (!svg_path.empty()) {
    std::ofstream svg(svg_path);
    if (!svg) throw std::runtime_error("cannot write " + svg_path);
    const double R = 200.0, C = 220.0;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"440\" height=\"470\">\n"
        << "<circle cx=\"" << C << "\" cy=\"" << C << "\" r=\"" << R
        << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (std::size_t row = 0; row < disk.size(); ++row) {
      svg << "<circle cx=\"" << C + R * disk[row][0] << "\" cy=\"" << C - R * disk[row][1]
          << "\" r=\"2\" fill=\"" << kColors[row % kNumParts] << "\" fill-opacity=\"0.7\"/>\n";
    }
    for (std::size_t p = 0; p < kNumParts; ++p) {
      svg << "<text x=\"" << 20 + 100 * p << "\" y=\"455\" fill=\"" << kColors[p]
          << "\" font-family=\"sans-serif\" font-size=\"14\">" << kPartNames[p] << "</text>\n";
    }
    svg << "</svg>\n";
    if (!svg) throw std::runtime_error("failed writing " + svg_path);
  }
  return res;
}

}  // namespace hyperskel
