// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "evsd/types.hpp"

namespace evsd {

// Reads a RIFF/WAVE file (PCM16 or float32, any channel count). Multichannel
// audio is averaged to mono. No resampling: if the file rate differs from
// `expected_rate` the returned clip has rate_mismatch set.
AudioClip load_clip(const std::filesystem::path& path,
                    int expected_rate = kDefaultSampleRate);

// Writes mono PCM16.
void write_wav(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate);

enum class ExclusionPolicy {
  kDrop,            // excluded clips disappear from the index
  kRelabelNegative  // excluded clips stay, with no annotations
};

struct AnnotationIndex {
  std::map<std::string, std::vector<Annotation>> clips;
  // Clip ids named by the exclusion list.
  std::set<std::string> excluded;

  // Whether a clip takes part in evaluation at all.
  bool evaluated(const std::string& clip_id) const {
    return clips.count(clip_id) != 0 || excluded.count(clip_id) == 0;
  }
  // Annotations for a clip; empty when the clip has none.
  const std::vector<Annotation>& for_clip(const std::string& clip_id) const;
};

// TSV `clip_id<TAB>onset<TAB>offset<TAB>label`, or JSONL objects with
// clip_id, onset_s, offset_s, label. `#` lines are comments; a leading
// non-numeric header row is skipped.
AnnotationIndex load_annotations(
    const std::filesystem::path& path,
    const std::optional<std::filesystem::path>& exclusion_list = std::nullopt,
    ExclusionPolicy policy = ExclusionPolicy::kDrop);

std::set<std::string> load_exclusion_list(const std::filesystem::path& path);

nlohmann::json config_to_json(const EngineConfig& cfg);
// Fields absent from `j` keep their value in `base`. Unknown keys are errors.
EngineConfig config_from_json(const nlohmann::json& j, EngineConfig base = {});

inline constexpr int kLogVersion = 1;

void write_log(const std::filesystem::path& path, const InferenceLog& log);
void write_log(std::ostream& out, const InferenceLog& log);
InferenceLog read_log(const std::filesystem::path& path);
InferenceLog read_log(std::istream& in);

// Writes via a sibling temp file and renames, so a reader never sees a
// half-written artifact.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace evsd
