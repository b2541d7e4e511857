#include "aad/io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "aad/common.hpp"

namespace aad {

namespace {

uint32_t rd_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("truncated", "wav: truncated");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

uint16_t rd_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw IoError("truncated", "wav: truncated");
  return uint16_t(b[0]) | uint16_t(b[1]) << 8;
}

void wr_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void wr_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

RawSignal read_wav_mono(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("open-failed", "wav: cannot open " + path);
  char tag[4];
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "RIFF", 4) != 0)
    throw IoError("bad-magic", "wav: not a RIFF file: " + path);
  rd_u32(is);  // riff size
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "WAVE", 4) != 0)
    throw IoError("bad-magic", "wav: not a WAVE file: " + path);

  uint16_t channels = 0, bits = 0, format = 0;
  uint32_t rate = 0;
  std::vector<double> samples;
  bool have_fmt = false, have_data = false;
  while (is.read(tag, 4)) {
    const uint32_t size = rd_u32(is);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = rd_u16(is);
      channels = rd_u16(is);
      rate = rd_u32(is);
      rd_u32(is);  // byte rate
      rd_u16(is);  // block align
      bits = rd_u16(is);
      if (size > 16) is.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      require(have_fmt, "wav: data chunk before fmt in " + path);
      if (format != 1 || bits != 16)
        throw IoError("bad-format", "wav: expected 16-bit PCM in " + path);
      if (channels != 1) throw IoError("bad-format", "wav: expected mono audio in " + path);
      const uint32_t n = size / 2;
      samples.resize(n);
      std::vector<int16_t> raw(n);
      is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(size));
      if (!is) throw IoError("truncated", "wav: truncated data chunk in " + path);
      for (uint32_t i = 0; i < n; ++i) samples[i] = double(raw[i]) / 32768.0;
      have_data = true;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }
  if (!have_data) throw IoError("truncated", "wav: no data chunk in " + path);
  return mono_signal(std::move(samples), int64_t(rate));
}

void write_wav_mono(const std::string& path, const RawSignal& sig) {
  require(sig.channels() == 1, "write_wav_mono: mono signal required");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("open-failed", "wav: cannot open " + path);
  const uint32_t n = uint32_t(sig.length());
  os.write("RIFF", 4);
  wr_u32(os, 36 + 2 * n);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  wr_u32(os, 16);
  wr_u16(os, 1);  // PCM
  wr_u16(os, 1);  // mono
  wr_u32(os, uint32_t(sig.sample_rate));
  wr_u32(os, uint32_t(sig.sample_rate) * 2);
  wr_u16(os, 2);
  wr_u16(os, 16);
  os.write("data", 4);
  wr_u32(os, 2 * n);
  for (uint32_t i = 0; i < n; ++i) {
    const double v = std::clamp(sig.samples[int64_t(i)], -1.0, 32767.0 / 32768.0);
    const int16_t s = int16_t(std::lround(v * 32768.0));
    os.write(reinterpret_cast<const char*>(&s), 2);
  }
}

RawSignal prepare_audio(const RawSignal& in) {
  constexpr int64_t kTarget = 16000;
  if (in.sample_rate == kTarget) return in;
  RawSignal sig = in;
  if (in.sample_rate > 2 * 8000) sig = lowpass_filter(sig, 8000.0);
  return resample(sig, kTarget);
}

const std::vector<std::string>& default_electrodes() {
  static const std::vector<std::string> e = {"F7", "F3", "F4", "F8", "T7",
                                             "C3", "Cz", "C4", "T8", "Pz"};
  return e;
}

RawSignal read_eeg_csv(const std::string& path, int64_t sample_rate,
                       const std::vector<std::string>& electrodes) {
  require(sample_rate > 0, "read_eeg_csv: sample rate must be positive");
  std::ifstream is(path);
  if (!is) throw IoError("open-failed", "eeg csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("truncated", "eeg csv: empty file " + path);

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string field;
    while (std::getline(ss, field, ',')) {
      while (!field.empty() && (field.back() == '\r' || field.back() == ' '))
        field.pop_back();
      size_t b = field.find_first_not_of(' ');
      out.push_back(b == std::string::npos ? "" : field.substr(b));
    }
    return out;
  };

  const auto header = split(line);
  std::vector<int64_t> cols;
  for (const auto& name : electrodes) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw std::invalid_argument("eeg csv: electrode '" + name + "' not in header of " + path);
    cols.push_back(it - header.begin());
  }

  std::vector<double> values;
  int64_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = split(line);
    if (fields.size() != header.size())
      throw IoError("bad-csv", "eeg csv: row " + std::to_string(rows + 1) + " has " +
                                   std::to_string(fields.size()) + " fields, expected " +
                                   std::to_string(header.size()));
    for (int64_t c : cols) values.push_back(std::stod(fields[size_t(c)]));
    ++rows;
  }
  require(rows >= 1, "eeg csv: no samples in " + path);
  return make_signal(Tensor<double>({rows, int64_t(cols.size())}, std::move(values)),
                     sample_rate);
}

}  // namespace aad
