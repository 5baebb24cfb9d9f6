#include "snpg/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "snpg/rng.hpp"

namespace snpg {

namespace fs = std::filesystem;

void validate_sequence(const SilhouetteSequence& seq) {
  if (seq.frames.empty()) throw DatasetError("sequence has no frames");
  const Shape& first = seq.frames.front().shape();
  if (first.size() != 2) throw DatasetError("frames must be 2-D, got " + shape_str(first));
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    const Frame& f = seq.frames[i];
    if (f.shape() != first) {
      throw DatasetError("frame " + std::to_string(i) + " has shape " + shape_str(f.shape()) +
                         ", expected " + shape_str(first));
    }
    for (float v : f.values()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw DatasetError("frame " + std::to_string(i) + " has a pixel outside [0, 1]");
      }
    }
  }
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int pgm_int(std::istream& in, const fs::path& path, const char* field) {
  const std::string tok = pgm_token(in);
  int v = 0;
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), ::isdigit) ||
      (v = std::stoi(tok)) <= 0) {
    throw DatasetError("malformed PGM " + std::string(field) + " in " + path.string());
  }
  return v;
}

}  // namespace

Frame read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open frame file " + path.string());
  if (pgm_token(in) != "P5") throw DatasetError("not a binary PGM (P5) file: " + path.string());
  const int width = pgm_int(in, path, "width");
  const int height = pgm_int(in, path, "height");
  const int maxval = pgm_int(in, path, "maxval");
  if (maxval != 255) {
    throw DatasetError("unsupported PGM maxval " + std::to_string(maxval) + " in " + path.string());
  }
  std::vector<unsigned char> bytes(static_cast<size_t>(width) * height);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<size_t>(in.gcount()) != bytes.size()) {
    throw DatasetError("truncated PGM pixel data in " + path.string());
  }
  Frame frame({height, width});
  for (size_t i = 0; i < bytes.size(); ++i) frame[static_cast<int64_t>(i)] = bytes[i] / 255.0f;
  return frame;
}

void write_pgm(const fs::path& path, const Frame& frame) {
  if (frame.rank() != 2) throw DatasetError("write_pgm expects a 2-D frame");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write frame file " + path.string());
  out << "P5\n" << frame.dim(1) << ' ' << frame.dim(0) << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<size_t>(frame.size()));
  for (int64_t i = 0; i < frame.size(); ++i) {
    const float v = std::clamp(frame[i], 0.0f, 1.0f);
    bytes[static_cast<size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError("failed writing frame file " + path.string());
}

std::string frame_filename(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06lld.pgm", static_cast<long long>(index));
  return buf;
}

SilhouetteSequence load_sequence(const fs::path& dir_path, int subject_id, int sequence_id) {
  if (!fs::is_directory(dir_path)) throw DatasetError("sequence directory not found: " + dir_path.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir_path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
  }
  if (files.empty()) throw DatasetError("no frame files in " + dir_path.string());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  SilhouetteSequence seq;
  seq.subject_id = subject_id;
  seq.sequence_id = sequence_id;
  for (const auto& f : files) {
    seq.frames.push_back(read_pgm(f));
    if (seq.frames.back().shape() != seq.frames.front().shape()) {
      throw DatasetError("inconsistent frame dimensions: " + f.string() + " is " +
                         shape_str(seq.frames.back().shape()) + ", expected " +
                         shape_str(seq.frames.front().shape()));
    }
  }
  return seq;
}

void write_sequence(const fs::path& dir_path, const SilhouetteSequence& seq) {
  validate_sequence(seq);
  fs::create_directories(dir_path);
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    write_pgm(dir_path / frame_filename(static_cast<int64_t>(i)), seq.frames[i]);
  }
}

void save_dataset(const fs::path& root, const std::vector<SilhouetteSequence>& seqs) {
  fs::create_directories(root);
  nlohmann::ordered_json manifest;
  manifest["subjects"] = nlohmann::json::array();
  std::vector<int> subject_ids;
  for (const auto& s : seqs) subject_ids.push_back(s.subject_id);
  std::sort(subject_ids.begin(), subject_ids.end());
  subject_ids.erase(std::unique(subject_ids.begin(), subject_ids.end()), subject_ids.end());
  for (int id : subject_ids) {
    nlohmann::ordered_json subject{{"id", id}, {"sequences", nlohmann::json::array()}};
    for (const auto& s : seqs) {
      if (s.subject_id != id) continue;
      write_sequence(root / std::to_string(id) / std::to_string(s.sequence_id), s);
      subject["sequences"].push_back(
          {{"id", s.sequence_id}, {"view", s.view_tag}, {"frames", s.length()}});
    }
    manifest["subjects"].push_back(std::move(subject));
  }
  std::ofstream out(root / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw DatasetError("failed writing manifest in " + root.string());
}

std::vector<SilhouetteSequence> load_dataset(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw DatasetError("dataset manifest not found: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  std::vector<SilhouetteSequence> seqs;
  try {
    for (const auto& subject : manifest.at("subjects")) {
      const int sid = subject.at("id").get<int>();
      for (const auto& entry : subject.at("sequences")) {
        const int qid = entry.at("id").get<int>();
        SilhouetteSequence seq =
            load_sequence(root / std::to_string(sid) / std::to_string(qid), sid, qid);
        seq.view_tag = entry.value("view", "");
        if (entry.contains("frames") && entry.at("frames").get<int64_t>() != seq.length()) {
          throw DatasetError("manifest frame count mismatch for subject " + std::to_string(sid) +
                             " sequence " + std::to_string(qid));
        }
        seqs.push_back(std::move(seq));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return seqs;
}

void SynthSpec::validate() const {
  if (num_subjects < 2) throw std::invalid_argument("synth: num_subjects must be >= 2");
  if (sequences_per_subject < 2) throw std::invalid_argument("synth: sequences_per_subject must be >= 2");
  if (frames_per_sequence < 1) throw std::invalid_argument("synth: frames_per_sequence must be >= 1");
  if (height < 32 || width < 22) throw std::invalid_argument("synth: frame size must be at least 32x22");
  if (!(noise_level >= 0.0 && noise_level < 1.0)) {
    throw std::invalid_argument("synth: noise_level must lie in [0, 1)");
  }
}

namespace {

// Stream tags keep generator draws for different purposes independent.
constexpr uint64_t kGaitTag = 1;
constexpr uint64_t kPhaseTag = 2;
constexpr uint64_t kNoiseTag = 3;

struct Point {
  double x, y;
};

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

GaitParams subject_gait_params(const SynthSpec& spec, int subject) {
  Rng rng = make_stream(spec.seed, kGaitTag, static_cast<uint64_t>(subject));
  const double scale = spec.height / 64.0;
  GaitParams p{};
  p.torso_length = uniform_real(rng, 13.0, 20.0) * scale;
  p.thigh_length = uniform_real(rng, 9.0, 14.0) * scale;
  p.shin_length = uniform_real(rng, 9.0, 14.0) * scale;
  p.torso_radius = uniform_real(rng, 2.0, 4.5) * scale;
  p.leg_radius = uniform_real(rng, 1.2, 2.4) * scale;
  p.period = uniform_real(rng, 12.0, 20.0);
  p.swing = uniform_real(rng, 0.25, 0.6);
  p.knee = uniform_real(rng, 0.2, 0.9);
  p.lean = uniform_real(rng, -0.15, 0.15);
  return p;
}

double sequence_phase(const SynthSpec& spec, int subject, int sequence) {
  Rng rng = make_stream(spec.seed, kPhaseTag,
                        (static_cast<uint64_t>(subject) << 32) | static_cast<uint32_t>(sequence));
  return uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
}

double frame_phase(const GaitParams& params, double start_phase, int64_t index) {
  return start_phase + 2.0 * std::numbers::pi * static_cast<double>(index) / params.period;
}

Frame render_walker(const GaitParams& p, double phase, int height, int width) {
  const double leg_len = p.thigh_length + p.shin_length;
  const Point hip{width / 2.0, height - 2.0 - leg_len};
  const Point neck{hip.x + p.torso_length * std::sin(p.lean), hip.y - p.torso_length * std::cos(p.lean)};
  struct Capsule {
    Point a, b;
    double r;
  };
  std::vector<Capsule> parts{{hip, neck, p.torso_radius}};
  for (int leg = 0; leg < 2; ++leg) {
    const double theta = phase + leg * std::numbers::pi;
    const double hip_angle = p.swing * std::sin(theta);
    const double shin_angle = hip_angle - p.knee * std::max(0.0, std::cos(theta));
    const Point knee{hip.x + p.thigh_length * std::sin(hip_angle),
                     hip.y + p.thigh_length * std::cos(hip_angle)};
    const Point foot{knee.x + p.shin_length * std::sin(shin_angle),
                     knee.y + p.shin_length * std::cos(shin_angle)};
    parts.push_back({hip, knee, p.leg_radius});
    parts.push_back({knee, foot, p.leg_radius});
  }
  Frame frame({height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Point c{x + 0.5, y + 0.5};
      for (const auto& part : parts) {
        if (segment_distance(c, part.a, part.b) <= part.r) {
          frame[static_cast<int64_t>(y) * width + x] = 1.0f;
          break;
        }
      }
    }
  }
  return frame;
}

SilhouetteSequence synth_sequence(const SynthSpec& spec, int subject, int sequence) {
  spec.validate();
  const GaitParams params = subject_gait_params(spec, subject);
  const double start = sequence_phase(spec, subject, sequence);
  SilhouetteSequence seq;
  seq.subject_id = subject;
  seq.sequence_id = sequence;
  seq.view_tag = "side";
  const int h = spec.height, w = spec.width;
  for (int t = 0; t < spec.frames_per_sequence; ++t) {
    Frame clean = render_walker(params, frame_phase(params, start, t), h, w);
    if (spec.noise_level > 0) {
      // Flip boundary pixels (those with a differing 4-neighbour); interior
      // foreground is never touched, so every frame keeps foreground.
      Rng rng = make_stream(spec.seed, kNoiseTag,
                            (static_cast<uint64_t>(subject) << 40) ^
                                (static_cast<uint64_t>(sequence) << 20) ^ static_cast<uint64_t>(t));
      std::bernoulli_distribution flip(spec.noise_level);
      Frame noisy = clean;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const float v = clean[static_cast<int64_t>(y) * w + x];
          bool boundary = false;
          const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
          for (int k = 0; k < 4 && !boundary; ++k) {
            const int ny = y + dy[k], nx = x + dx[k];
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            boundary = clean[static_cast<int64_t>(ny) * w + nx] != v;
          }
          if (boundary && flip(rng)) noisy[static_cast<int64_t>(y) * w + x] = 1.0f - v;
        }
      }
      clean = std::move(noisy);
    }
    seq.frames.push_back(std::move(clean));
  }
  return seq;
}

std::vector<SilhouetteSequence> synth_dataset(const SynthSpec& spec) {
  spec.validate();
  std::vector<SilhouetteSequence> out;
  for (int s = 0; s < spec.num_subjects; ++s) {
    for (int q = 0; q < spec.sequences_per_subject; ++q) out.push_back(synth_sequence(spec, s, q));
  }
  return out;
}

}  // namespace snpg
