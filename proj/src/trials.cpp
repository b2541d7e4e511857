#include "aad/trials.hpp"

#include <cstring>
#include <fstream>

#include "aad/common.hpp"
#include "json.hpp"

namespace aad {

namespace {

constexpr char kMagic[8] = {'A', 'A', 'D', 'T', 'R', 'L', 'v', '1'};

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("truncated", "truncated container header");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

void put_f32(std::ostream& os, const float* p, int64_t n) {
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n * 4));
}

}  // namespace

void write_trials(const std::string& path, const std::vector<TrialRecord>& records) {
  require(!records.empty(), "write_trials: no records");
  const TrialRecord& r0 = records[0];
  require(r0.eeg.rank() == 2 && r0.spec_a.rank() == 2 && r0.spec_b.rank() == 2,
          "write_trials: malformed record");
  for (const auto& r : records) {
    if (!(r.eeg.same_shape(r0.eeg) && r.spec_a.same_shape(r0.spec_a) &&
          r.spec_b.same_shape(r0.spec_b) && r.duration_s == r0.duration_s))
      throw IoError("dim-mismatch", "write_trials: records do not share dimensions");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("open-failed", "write_trials: cannot open " + path);
  os.write(kMagic, 8);
  put_u32(os, uint32_t(records.size()));
  put_u32(os, uint32_t(r0.eeg.dim(0)));
  put_u32(os, uint32_t(r0.eeg.dim(1)));
  put_u32(os, uint32_t(r0.spec_a.dim(0)));
  put_u32(os, uint32_t(r0.spec_a.dim(1)));
  put_u32(os, uint32_t(r0.duration_s * 1000));
  for (const auto& r : records) {
    const char label = char(r.label);
    os.write(&label, 1);
    put_f32(os, r.eeg.ptr(), r.eeg.numel());
    put_f32(os, r.spec_a.ptr(), r.spec_a.numel());
    put_f32(os, r.spec_b.ptr(), r.spec_b.numel());
  }
  if (!os) throw IoError("write-failed", "write_trials: short write to " + path);
}

std::vector<TrialRecord> read_trials(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("open-failed", "read_trials: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("bad-magic", "read_trials: bad magic in " + path);
  const uint32_t n_trials = get_u32(is);
  const uint32_t eeg_t = get_u32(is);
  const uint32_t n_elec = get_u32(is);
  const uint32_t spec_t = get_u32(is);
  const uint32_t n_freq = get_u32(is);
  const uint32_t duration_ms = get_u32(is);
  const uint32_t d = duration_ms / 1000;
  if (duration_ms % 1000 != 0 || d < 2 || d > 5 || eeg_t != 64 * d || spec_t != 50 * d + 1 ||
      n_elec != 10 || n_freq != 257)
    throw IoError("dim-mismatch", "read_trials: header dimensions are inconsistent");

  std::vector<TrialRecord> records;
  records.reserve(n_trials);
  for (uint32_t i = 0; i < n_trials; ++i) {
    TrialRecord r;
    char label = 0;
    is.read(&label, 1);
    r.label = uint8_t(label);
    r.duration_s = int32_t(d);
    r.eeg = Tensor<float>({int64_t(eeg_t), int64_t(n_elec)});
    r.spec_a = Tensor<float>({int64_t(spec_t), int64_t(n_freq)});
    r.spec_b = Tensor<float>({int64_t(spec_t), int64_t(n_freq)});
    is.read(reinterpret_cast<char*>(r.eeg.ptr()), std::streamsize(r.eeg.numel() * 4));
    is.read(reinterpret_cast<char*>(r.spec_a.ptr()), std::streamsize(r.spec_a.numel() * 4));
    is.read(reinterpret_cast<char*>(r.spec_b.ptr()), std::streamsize(r.spec_b.numel() * 4));
    if (!is)
      throw IoError("truncated", "read_trials: container ends before trial " +
                                     std::to_string(i) + " of " + std::to_string(n_trials));
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const std::string& path, const std::vector<TrialMeta>& metas) {
  std::ofstream os(path);
  if (!os) throw IoError("open-failed", "write_manifest: cannot open " + path);
  for (const auto& m : metas) {
    nlohmann::json j{{"trial", m.trial_index},
                     {"source", m.source_id},
                     {"begin", m.span_begin},
                     {"end", m.span_end},
                     {"split", m.split_hint}};
    os << j.dump() << "\n";
  }
}

std::vector<TrialMeta> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("open-failed", "read_manifest: cannot open " + path);
  std::vector<TrialMeta> metas;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IoError("bad-json", "read_manifest: malformed line");
    TrialMeta m;
    m.trial_index = j.at("trial").get<int64_t>();
    m.source_id = j.at("source").get<std::string>();
    m.span_begin = j.at("begin").get<int64_t>();
    m.span_end = j.at("end").get<int64_t>();
    m.split_hint = j.value("split", "");
    metas.push_back(std::move(m));
  }
  return metas;
}

}  // namespace aad
