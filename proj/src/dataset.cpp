#include "hyperskel/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace hyperskel {

namespace {

using json = nlohmann::ordered_json;

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::size_t kMaxVocab = 64;

const std::array<const char*, 5> kFillers{"the", "a", "now", "then", "so"};
const std::array<const char*, 8> kGroupWords{"greet", "travel", "eat", "work",
                                             "play", "learn", "home", "weather"};
const std::array<const char*, kShapesPerGroup> kShapeWords{"open", "fist", "point", "pair", "call"};
const std::array<const char*, 8> kModifiers{"slowly", "quickly", "again", "today",
                                            "here",   "there",   "together", "alone"};

// Finger curl per hand shape; thumb first.
const std::array<std::array<double, 5>, kShapesPerGroup> kCurl{{
    {0.0, 0.0, 0.0, 0.0, 0.0},
    {1.0, 1.0, 1.0, 1.0, 1.0},
    {1.0, 0.0, 1.0, 1.0, 1.0},
    {1.0, 0.0, 0.0, 1.0, 1.0},
    {0.0, 1.0, 1.0, 1.0, 0.0},
}};

std::size_t num_groups(std::size_t num_classes) {
  return (num_classes + kShapesPerGroup - 1) / kShapesPerGroup;
}

struct Pt {
  double x = 0.0, y = 0.0;
};

struct GroupMotion {
  double theta, cx, cy, amp, freq, ratio;
  bool mirrored;
};

GroupMotion group_motion(std::size_t g, std::size_t groups) {
  GroupMotion m;
  m.theta = kTwoPi * double(g) / double(groups) + 0.4;
  m.cx = 0.2 + 0.12 * std::cos(m.theta);
  m.cy = -0.15 + 0.18 * std::sin(m.theta);
  m.amp = 0.05 + 0.03 * double(g % 2);
  m.freq = 1.0 + 0.5 * double(g % 3);
  m.ratio = 1.0 + double(g % 2);
  m.mirrored = g % 2 == 0;
  return m;
}

std::vector<Pt> body_pose(const GroupMotion& m, double u) {
  std::vector<Pt> p(kJointCounts[0]);
  p[0] = {0.0, 0.0};
  p[1] = {0.02 * std::sin(kTwoPi * m.freq * u), 0.22};
  p[2] = {0.0, -0.5};
  p[3] = {-0.18, 0.0};
  p[4] = {0.18, 0.0};
  const Pt rw{m.cx + m.amp * std::cos(kTwoPi * m.freq * u),
              m.cy + m.amp * std::sin(kTwoPi * m.ratio * m.freq * u)};
  const Pt lw = m.mirrored ? Pt{-rw.x, rw.y} : Pt{-0.2, -0.4 + 0.015 * std::sin(kTwoPi * u)};
  p[8] = rw;
  p[7] = lw;
  p[6] = {(p[4].x + rw.x) / 2 + 0.07, (p[4].y + rw.y) / 2 - 0.06};
  p[5] = {(p[3].x + lw.x) / 2 - 0.07, (p[3].y + lw.y) / 2 - 0.06};
  return p;
}

// Wrist at the origin, fingers pointing up before rotation.
std::vector<Pt> hand_pose(std::size_t shape, const GroupMotion& m, double u,
                          const std::array<double, 5>& curl_offset) {
  static constexpr std::array<double, 4> kBones{0.45, 0.25, 0.18, 0.14};
  std::vector<Pt> p(kJointCounts[1]);
  const double rho = 0.35 * std::cos(m.theta) + 0.25 * std::sin(kTwoPi * m.freq * u);
  const double cr = std::cos(rho), sr = std::sin(rho);
  for (std::size_t f = 0; f < 5; ++f) {
    const double curl = kCurl[shape][f] +
                        0.12 * std::sin(kTwoPi * (u * double(1 + shape % 2) + double(f) / 5.0)) +
                        curl_offset[f];
    double a = -0.9 + 0.45 * double(f);
    Pt q;
    for (std::size_t k = 0; k < 4; ++k) {
      if (k > 0) a += 1.1 * curl;
      const double len = (f == 0 && k == 0) ? 0.3 : kBones[k];
      q.x += len * std::sin(a);
      q.y += len * std::cos(a);
      p[4 * f + k + 1] = {cr * q.x - sr * q.y, sr * q.x + cr * q.y};
    }
  }
  return p;
}

// Ring of 16 points starting at the top; joint 0 is the anchor.
std::vector<Pt> face_pose(std::size_t shape, std::size_t g, double u) {
  std::vector<Pt> p(kJointCounts[3]);
  const double open = (0.2 + 0.2 * double(shape)) * (0.5 + 0.5 * std::sin(kTwoPi * 2.0 * u));
  const double brow = 0.12 * double(g % 3);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double psi = std::numbers::pi / 2 - kTwoPi * double(k) / double(p.size());
    p[k] = {0.8 * std::cos(psi), std::sin(psi)};
    if (k >= 6 && k <= 10) {
      p[k].y -= 0.3 * open * (1.0 - std::abs(double(k) - 8.0) / 3.0);
    }
    if (k >= 14 || k <= 2) p[k].y += brow;
  }
  const Pt anchor = p[0];
  for (auto& q : p) q = {q.x - anchor.x, q.y - anchor.y};
  return p;
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

}  // namespace

std::vector<std::string> build_vocab(std::size_t num_classes) {
  std::vector<std::string> v{"<pad>", "<bos>", "<eos>"};
  for (auto w : kFillers) v.emplace_back(w);
  const std::size_t groups = num_groups(num_classes);
  for (std::size_t g = 0; g < groups; ++g) {
    v.emplace_back(g < kGroupWords.size() ? kGroupWords[g] : "topic" + std::to_string(g));
  }
  for (auto w : kShapeWords) v.emplace_back(w);
  for (auto w : kModifiers) v.emplace_back(w);
  if (v.size() > kMaxVocab) {
    throw std::invalid_argument("num_classes " + std::to_string(num_classes) +
                                " needs a vocabulary of " + std::to_string(v.size()) +
                                " tokens (at most 64)");
  }
  return v;
}

std::vector<int> sentence_for(int label, std::size_t num_classes) {
  const int groups = int(num_groups(num_classes));
  const int g = label / int(kShapesPerGroup), s = label % int(kShapesPerGroup);
  const int filler0 = 3, group0 = filler0 + 5, shape0 = group0 + groups,
            mod0 = shape0 + int(kShapesPerGroup);
  std::vector<int> t{filler0 + label % 5, group0 + g, shape0 + s, mod0 + (3 * g + s) % 8};
  if (label % 3 == 0) t.push_back(mod0 + (g + 2 * s + 1) % 8);
  return t;
}

SyntheticDataset generate_dataset(const DataConfig& cfg) {
  cfg.validate();
  SyntheticDataset data;
  data.config = cfg;
  data.vocab = build_vocab(cfg.num_classes);
  for (std::size_t l = 0; l < cfg.num_classes; ++l) {
    data.class_tokens.push_back(sentence_for(int(l), cfg.num_classes));
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t groups = num_groups(cfg.num_classes);
  const std::array<double, kNumParts> part_scale{0.2, cfg.hand_scale, cfg.hand_scale,
                                                 cfg.face_scale};

  for (std::size_t k = 0; k < cfg.samples_per_class; ++k) {
    for (std::size_t l = 0; l < cfg.num_classes; ++l) {
      Sample s;
      s.id = data.samples.size();
      s.label = int(l);
      s.tokens = data.class_tokens[l];
      const std::size_t g = l / kShapesPerGroup, shape = l % kShapesPerGroup;
      const GroupMotion motion = group_motion(g, groups);

      s.length = cfg.min_frames +
                 std::size_t(unit(rng) * double(cfg.frames - cfg.min_frames + 1));
      s.length = std::min(s.length, cfg.frames);
      const double gamma = std::exp(std::log(0.8) + unit(rng) * (std::log(1.25) - std::log(0.8)));
      const double delta = 0.1 * (unit(rng) - 0.5);
      const double body_scale = 0.92 + 0.16 * unit(rng);
      const Pt shift{0.08 * (unit(rng) - 0.5), 0.08 * (unit(rng) - 0.5)};
      std::array<double, 5> curl_offset;
      for (auto& c : curl_offset) c = cfg.jitter * gauss(rng);
      std::array<std::vector<double>, kNumParts> amp, phase;
      for (std::size_t p = 0; p < kNumParts; ++p) {
        for (std::size_t i = 0; i < 2 * kJointCounts[p]; ++i) {
          amp[p].push_back(cfg.jitter * part_scale[p] * gauss(rng));
          phase[p].push_back(kTwoPi * unit(rng));
        }
      }

      for (std::size_t p = 0; p < kNumParts; ++p) s.keypoints[p].reserve(s.length * kJointCounts[p] * 2);
      for (std::size_t t = 0; t < s.length; ++t) {
        const double r = s.length > 1 ? double(t) / double(s.length - 1) : 0.0;
        const double u = std::pow(r, gamma) + delta;
        std::array<std::vector<Pt>, kNumParts> pose{
            body_pose(motion, u), hand_pose(shape, motion, u, curl_offset),
            hand_pose(shape, motion, u, curl_offset), face_pose(shape, g, u)};
        for (auto& q : pose[0]) q = {body_scale * q.x + shift.x, body_scale * q.y + shift.y};
        for (auto& q : pose[1]) q = {-q.x * cfg.hand_scale, q.y * cfg.hand_scale};
        for (auto& q : pose[2]) q = {q.x * cfg.hand_scale, q.y * cfg.hand_scale};
        for (auto& q : pose[3]) q = {q.x * cfg.face_scale, q.y * cfg.face_scale};
        for (std::size_t p = 0; p < kNumParts; ++p) {
          for (std::size_t j = 0; j < kJointCounts[p]; ++j) {
            // The anchor joints of hands and face stay at the origin.
            const bool anchor = p > 0 && j == 0;
            for (std::size_t a = 0; a < 2; ++a) {
              double v = a == 0 ? pose[p][j].x : pose[p][j].y;
              if (!anchor) {
                const std::size_t i = 2 * j + a;
                v += amp[p][i] * std::sin(kTwoPi * u + phase[p][i]);
                v += cfg.noise * gauss(rng);
              }
              s.keypoints[p].push_back(round6(v));
            }
          }
        }
      }
      data.samples.push_back(std::move(s));
    }
  }
  return data;
}

void save_dataset(const SyntheticDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file " + path);
  const auto& c = data.config;
  json header{{"format", "hyperskel-dataset"},
              {"version", kDatasetVersion},
              {"config",
               {{"num_classes", c.num_classes},
                {"samples_per_class", c.samples_per_class},
                {"frames", c.frames},
                {"min_frames", c.min_frames},
                {"hand_scale", c.hand_scale},
                {"face_scale", c.face_scale},
                {"jitter", c.jitter},
                {"noise", c.noise},
                {"seed", c.seed}}},
              {"parts", json::array()},
              {"vocab", data.vocab},
              {"class_tokens", data.class_tokens},
              {"num_samples", data.samples.size()}};
  for (std::size_t p = 0; p < kNumParts; ++p) {
    header["parts"].push_back({{"name", kPartNames[p]}, {"joints", kJointCounts[p]}});
  }
  out << header.dump() << '\n';
  for (const auto& s : data.samples) {
    json row{{"id", s.id}, {"label", s.label}, {"length", s.length}, {"tokens", s.tokens}};
    for (std::size_t p = 0; p < kNumParts; ++p) row[kPartNames[p]] = s.keypoints[p];
    out << row.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing dataset file " + path);
}

SyntheticDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty dataset file " + path);
  const json header = json::parse(line);
  if (header.value("format", "") != "hyperskel-dataset") {
    throw std::runtime_error(path + " is not a hyperskel dataset");
  }
  if (header.at("version").get<int>() != kDatasetVersion) {
    throw std::runtime_error(path + ": unsupported dataset version " +
                             header.at("version").dump());
  }
  SyntheticDataset data;
  const auto& c = header.at("config");
  data.config.num_classes = c.at("num_classes");
  data.config.samples_per_class = c.at("samples_per_class");
  data.config.frames = c.at("frames");
  data.config.min_frames = c.at("min_frames");
  data.config.hand_scale = c.at("hand_scale");
  data.config.face_scale = c.at("face_scale");
  data.config.jitter = c.at("jitter");
  data.config.noise = c.at("noise");
  data.config.seed = c.at("seed");
  data.vocab = header.at("vocab").get<std::vector<std::string>>();
  data.class_tokens = header.at("class_tokens").get<std::vector<std::vector<int>>>();
  const std::size_t n = header.at("num_samples");
  data.samples.reserve(n);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json row = json::parse(line);
    Sample s;
    s.id = row.at("id");
    s.label = row.at("label");
    s.length = row.at("length");
    s.tokens = row.at("tokens").get<std::vector<int>>();
    for (std::size_t p = 0; p < kNumParts; ++p) {
      s.keypoints[p] = row.at(kPartNames[p]).get<std::vector<double>>();
      if (s.keypoints[p].size() != s.length * kJointCounts[p] * 2) {
        throw std::runtime_error(path + " line " + std::to_string(lineno) + ": " + kPartNames[p] +
                                 " has " + std::to_string(s.keypoints[p].size()) +
                                 " coordinates for " + std::to_string(s.length) + " frames");
      }
    }
    if (s.label < 0 || std::size_t(s.label) >= data.class_tokens.size() || s.length == 0 ||
        s.length > data.config.frames) {
      throw std::runtime_error(path + " line " + std::to_string(lineno) + ": bad label or length");
    }
    data.samples.push_back(std::move(s));
  }
  if (data.samples.size() != n) {
    throw std::runtime_error(path + ": expected " + std::to_string(n) + " samples, found " +
                             std::to_string(data.samples.size()));
  }
  return data;
}

std::vector<std::size_t> eval_indices(const SyntheticDataset& data, std::size_t every) {
  std::vector<std::size_t> seen(data.num_classes(), 0), out;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    if (seen[data.samples[i].label]++ % every == every - 1) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> train_indices(const SyntheticDataset& data, std::size_t every) {
  std::vector<std::size_t> seen(data.num_classes(), 0), out;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    if (seen[data.samples[i].label]++ % every != every - 1) out.push_back(i);
  }
  return out;
}

}  // namespace hyperskel
