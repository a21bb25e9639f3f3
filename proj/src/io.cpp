// SPDX-License-Identifier: Apache-2.0
#include "evsd/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace evsd {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::uint32_t le32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

std::uint16_t le16(const char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

void put32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put16(std::string& out, std::uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); }

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_real(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

}  // namespace

AudioClip load_clip(const fs::path& path, int expected_rate) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw FormatError(path.string() + ": not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* hdr = bytes.data() + pos;
    std::size_t len = le32(hdr + 4);
    std::size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16 || body + len > bytes.size()) throw FormatError(path.string() + ": bad fmt chunk");
      format = le16(bytes.data() + body);
      channels = le16(bytes.data() + body + 2);
      rate = le32(bytes.data() + body + 4);
      bits = le16(bytes.data() + body + 14);
      if (format == 0xFFFE && len >= 26) format = le16(bytes.data() + body + 24);
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = std::min(len, bytes.size() - body);
      break;
    }
    pos = body + len + (len & 1);
  }
  if (channels == 0 || rate == 0) throw FormatError(path.string() + ": missing fmt chunk");
  if (data == nullptr) throw FormatError(path.string() + ": missing data chunk");

  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    throw FormatError(path.string() + ": unsupported encoding (format " + std::to_string(format) +
                      ", " + std::to_string(bits) + " bits)");
  }
  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t n = data_len / frame_bytes;
  if (n == 0) throw FormatError(path.string() + ": zero-length audio");

  AudioClip clip;
  clip.clip_id = path.stem().string();
  clip.sample_rate = static_cast<int>(rate);
  clip.rate_mismatch = clip.sample_rate != expected_rate;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const char* p = data + i * frame_bytes + c * (bits / 8);
      if (pcm16) {
        std::int16_t s;
        std::memcpy(&s, p, 2);
        acc += s / 32768.0;
      } else {
        float s;
        std::memcpy(&s, p, 4);
        if (!std::isfinite(s)) throw FormatError(path.string() + ": non-finite sample");
        acc += std::clamp(static_cast<double>(s), -1.0, 1.0);
      }
    }
    clip.samples[i] = static_cast<float>(acc / channels);
  }
  return clip;
}

void write_wav(const fs::path& path, std::span<const float> samples, int sample_rate) {
  std::string out;
  const auto data_len = static_cast<std::uint32_t>(samples.size() * 2);
  out.reserve(44 + data_len);
  out += "RIFF";
  put32(out, 36 + data_len);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(sample_rate));
  put32(out, static_cast<std::uint32_t>(sample_rate) * 2);
  put16(out, 2);
  put16(out, 16);
  out += "data";
  put32(out, data_len);
  for (float s : samples) {
    double v = std::clamp(static_cast<double>(s), -1.0, 32767.0 / 32768.0);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(v * 32768.0))));
  }
  write_file_atomic(path, out);
}

const std::vector<Annotation>& AnnotationIndex::for_clip(const std::string& clip_id) const {
  static const std::vector<Annotation> kNone;
  auto it = clips.find(clip_id);
  return it == clips.end() ? kNone : it->second;
}

std::set<std::string> load_exclusion_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open exclusion list " + path.string());
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    out.insert(line);
  }
  return out;
}

AnnotationIndex load_annotations(const fs::path& path,
                                 const std::optional<fs::path>& exclusion_list,
                                 ExclusionPolicy policy) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open annotations " + path.string());

  AnnotationIndex index;
  std::vector<Annotation> rows;
  std::string line;
  int line_no = 0;
  bool seen_data = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);

    Annotation a;
    if (line[0] == '{') {
      json j;
      try {
        j = json::parse(line);
        a.clip_id = j.at("clip_id").get<std::string>();
        a.onset_s = j.at("onset_s").get<double>();
        a.offset_s = j.at("offset_s").get<double>();
        a.label = j.value("label", std::string());
      } catch (const json::exception& e) {
        throw FormatError(where + ": malformed row (" + e.what() + ")");
      }
    } else {
      auto cols = split_tabs(line);
      if (cols.size() < 3) throw FormatError(where + ": malformed row (expected 4 tab-separated columns)");
      auto onset = parse_real(trim(cols[1]));
      auto offset = parse_real(trim(cols[2]));
      if (!onset || !offset) {
        if (!seen_data && !onset && !offset) {
          seen_data = true;  // header row
          continue;
        }
        throw FormatError(where + ": malformed row (non-numeric onset/offset)");
      }
      a.clip_id = trim(cols[0]);
      a.onset_s = *onset;
      a.offset_s = *offset;
      a.label = cols.size() > 3 ? trim(cols[3]) : std::string();
    }
    seen_data = true;
    if (a.clip_id.empty()) throw FormatError(where + ": empty clip_id");
    if (a.onset_s < 0.0) throw FormatError(where + ": negative onset");
    if (!(a.onset_s < a.offset_s)) throw FormatError(where + ": onset >= offset");
    rows.push_back(std::move(a));
  }

  if (exclusion_list) index.excluded = load_exclusion_list(*exclusion_list);

  for (auto& a : rows) {
    if (index.excluded.count(a.clip_id)) {
      if (policy == ExclusionPolicy::kRelabelNegative) index.clips[a.clip_id];
      continue;
    }
    index.clips[a.clip_id].push_back(std::move(a));
  }
  for (auto& [id, list] : index.clips) {
    std::sort(list.begin(), list.end(), [](const Annotation& x, const Annotation& y) {
      if (x.onset_s != y.onset_s) return x.onset_s < y.onset_s;
      if (x.offset_s != y.offset_s) return x.offset_s < y.offset_s;
      return x.label < y.label;
    });
  }
  return index;
}

json config_to_json(const EngineConfig& c) {
  return json{{"threshold", c.threshold},
              {"growth_threshold", c.growth_threshold ? json(*c.growth_threshold) : json(nullptr)},
              {"min_frame_samples", c.min_frame_samples},
              {"max_frame_s", c.max_frame_s},
              {"increment_rate", c.increment_rate},
              {"smoothing_window", c.smoothing_window},
              {"consecutive_k", c.consecutive_k},
              {"release_m", c.release_m},
              {"grid_resolution_s", c.grid_resolution_s},
              {"fp_run_n", c.fp_run_n},
              {"buffer_capacity_s", c.buffer_capacity_s},
              {"chunk_samples", c.chunk_samples}};
}

EngineConfig config_from_json(const json& j, EngineConfig c) {
  if (!j.is_object()) throw FormatError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    try {
      if (k == "threshold") c.threshold = v.get<double>();
      else if (k == "growth_threshold")
        c.growth_threshold = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (k == "min_frame_samples") c.min_frame_samples = v.get<std::int64_t>();
      else if (k == "max_frame_s") c.max_frame_s = v.get<double>();
      else if (k == "increment_rate") c.increment_rate = v.get<double>();
      else if (k == "smoothing_window") c.smoothing_window = v.get<int>();
      else if (k == "consecutive_k") c.consecutive_k = v.get<int>();
      else if (k == "release_m") c.release_m = v.get<int>();
      else if (k == "grid_resolution_s") c.grid_resolution_s = v.get<double>();
      else if (k == "fp_run_n") c.fp_run_n = v.get<int>();
      else if (k == "buffer_capacity_s") c.buffer_capacity_s = v.get<double>();
      else if (k == "chunk_samples") c.chunk_samples = v.get<std::int64_t>();
      else throw FormatError("unknown config field '" + k + "'");
    } catch (const json::exception&) {
      throw FormatError("config field '" + k + "' has the wrong type");
    }
  }
  return c;
}

namespace {

json frame_to_json(const FrameResult& f) {
  return json{{"type", "frame"},
              {"index", f.index},
              {"start_s", f.start_s},
              {"end_s", f.end_s},
              {"frame_samples", f.frame_samples},
              {"requested_s", f.requested_s},
              {"probability", f.probability},
              {"smoothed_probability", f.smoothed_probability},
              {"processing_ms", f.processing_ms},
              {"wall_timestamp", f.wall_timestamp}};
}

}  // namespace

void write_log(std::ostream& out, const InferenceLog& log) {
  auto line = [&out](const json& j) { out << j.dump() << '\n'; };
  line(json{{"type", "header"},
            {"version", kLogVersion},
            {"clip_id", log.clip_id},
            {"sample_rate", log.sample_rate},
            {"duration_s", log.duration_s},
            {"started_at", log.started_at},
            {"dropped_samples", log.dropped_samples},
            {"config", config_to_json(log.config)}});
  for (const auto& f : log.frames) line(frame_to_json(f));
  for (const auto& r : log.resources)
    line(json{{"type", "resource"}, {"timestamp", r.timestamp}, {"cpu_pct", r.cpu_pct}, {"mem_pct", r.mem_pct}});
  for (const auto& d : log.detections)
    line(json{{"type", "detection"},
              {"onset_s", d.onset_s},
              {"offset_s", d.offset_s},
              {"peak_probability", d.peak_probability},
              {"frame_count", d.frame_count}});
  for (const auto& c : log.config_changes)
    line(json{{"type", "config_change"},
              {"timestamp", c.timestamp},
              {"frame_index", c.frame_index},
              {"config", config_to_json(c.config)}});
  for (const auto& i : log.interruptions)
    line(json{{"type", "interruption"}, {"timestamp", i.timestamp}, {"reason", i.reason}});
}

void write_log(const fs::path& path, const InferenceLog& log) {
  std::ostringstream os;
  write_log(os, log);
  write_file_atomic(path, os.str());
}

InferenceLog read_log(std::istream& in) {
  const std::string text(std::istreambuf_iterator<char>(in), {});
  if (text.empty()) throw FormatError("log is empty");
  if (text.back() != '\n') throw FormatError("log is truncated (last record incomplete)");

  InferenceLog log;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw FormatError("log line " + std::to_string(line_no) + ": truncated or corrupt record");
    }
    try {
      const std::string type = j.at("type").get<std::string>();
      if (line_no == 1) {
        if (type != "header") throw FormatError("log does not start with a header record");
        const int version = j.at("version").get<int>();
        if (version != kLogVersion)
          throw FormatError("log version " + std::to_string(version) + " not supported (expected " +
                            std::to_string(kLogVersion) + ")");
        log.clip_id = j.at("clip_id").get<std::string>();
        log.sample_rate = j.value("sample_rate", kDefaultSampleRate);
        log.duration_s = j.value("duration_s", 0.0);
        log.started_at = j.value("started_at", 0.0);
        log.dropped_samples = j.value("dropped_samples", std::uint64_t{0});
        log.config = config_from_json(j.at("config"));
      } else if (type == "frame") {
        FrameResult f;
        f.index = j.at("index").get<std::int64_t>();
        f.start_s = j.at("start_s").get<double>();
        f.end_s = j.at("end_s").get<double>();
        f.frame_samples = j.at("frame_samples").get<std::int64_t>();
        f.requested_s = j.value("requested_s", 0.0);
        f.probability = j.at("probability").get<double>();
        f.smoothed_probability = j.at("smoothed_probability").get<double>();
        f.processing_ms = j.at("processing_ms").get<double>();
        f.wall_timestamp = j.at("wall_timestamp").get<double>();
        log.frames.push_back(f);
      } else if (type == "resource") {
        log.resources.push_back({j.at("timestamp").get<double>(), j.at("cpu_pct").get<double>(),
                                 j.at("mem_pct").get<double>()});
      } else if (type == "detection") {
        log.detections.push_back({j.at("onset_s").get<double>(), j.at("offset_s").get<double>(),
                                  j.at("peak_probability").get<double>(),
                                  j.at("frame_count").get<std::int64_t>()});
      } else if (type == "config_change") {
        log.config_changes.push_back({j.at("timestamp").get<double>(),
                                      j.at("frame_index").get<std::int64_t>(),
                                      config_from_json(j.at("config"))});
      } else if (type == "interruption") {
        log.interruptions.push_back({j.at("timestamp").get<double>(), j.at("reason").get<std::string>()});
      } else if (type == "header") {
        throw FormatError("duplicate header record");
      } else {
        throw FormatError("unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw FormatError("log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (line_no == 0) throw FormatError("log has no header");
  return log;
}

InferenceLog read_log(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open log " + path.string());
  try {
    return read_log(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  fs::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw Error("write failed for " + path.string());
    }
  }
  fs::rename(tmp, path);
}

}  // namespace evsd
