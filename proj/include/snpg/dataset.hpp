#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "snpg/ndarray.hpp"

namespace snpg {

// A silhouette frame: [height, width] values in [0, 1].
using Frame = NdArray<float>;

struct SilhouetteSequence {
  int subject_id = 0;
  int sequence_id = 0;
  std::string view_tag;
  std::vector<Frame> frames;

  int64_t length() const { return static_cast<int64_t>(frames.size()); }
  int64_t height() const { return frames.at(0).dim(0); }
  int64_t width() const { return frames.at(0).dim(1); }
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws DatasetError if frames are empty, ragged, or out of [0, 1].
void validate_sequence(const SilhouetteSequence& seq);

Frame read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Frame& frame);

std::string frame_filename(int64_t index);

// Loads every *.pgm in dir_path in lexicographic filename order.
SilhouetteSequence load_sequence(const std::filesystem::path& dir_path, int subject_id = 0,
                                 int sequence_id = 0);
void write_sequence(const std::filesystem::path& dir_path, const SilhouetteSequence& seq);

// <root>/<subject>/<sequence>/frame_%06d.pgm plus <root>/manifest.json.
void save_dataset(const std::filesystem::path& root, const std::vector<SilhouetteSequence>& seqs);
std::vector<SilhouetteSequence> load_dataset(const std::filesystem::path& root);

struct SynthSpec {
  int num_subjects = 16;
  int sequences_per_subject = 4;
  int frames_per_sequence = 64;
  int height = 64;
  int width = 44;
  uint64_t seed = 7;
  double noise_level = 0.05;

  void validate() const;
};

// Identity-specific parameters of the side-view stick walker. Lengths are in
// pixels, angles in radians.
struct GaitParams {
  double torso_length;
  double thigh_length;
  double shin_length;
  double torso_radius;
  double leg_radius;
  double period;  // frames per gait cycle
  double swing;   // hip swing amplitude
  double knee;    // knee flexion amplitude
  double lean;    // torso lean
};

GaitParams subject_gait_params(const SynthSpec& spec, int subject);
double sequence_phase(const SynthSpec& spec, int subject, int sequence);

// Gait phase of frame `index` for a sequence starting at `start_phase`.
double frame_phase(const GaitParams& params, double start_phase, int64_t index);

// Binary silhouette (foreground 1, background 0) of the walker at `phase`.
Frame render_walker(const GaitParams& params, double phase, int height, int width);

SilhouetteSequence synth_sequence(const SynthSpec& spec, int subject, int sequence);
std::vector<SilhouetteSequence> synth_dataset(const SynthSpec& spec);

}  // namespace snpg
