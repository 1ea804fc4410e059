#pragma once

// Mono WAV reading and writing: 16-bit PCM and 32-bit IEEE float.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vprir/errors.hpp"

namespace vprir {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

enum class WavEncoding { pcm16, float32 };

struct Audio {
  std::vector<double> samples;  // in [-1, 1] for PCM input
  int sample_rate = 0;
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

inline std::uint16_t read_u16(const unsigned char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace detail

inline Audio load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_wav: cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) { return IoError("load_wav: " + path.string() + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t size = detail::read_u32(chunk + 4);
    if (pos + 8 + size > bytes.size()) {
      // Tolerate a data chunk whose declared size runs past the end.
      if (std::memcmp(chunk, "data", 4) != 0) throw fail("truncated chunk");
    }
    const std::size_t avail = std::min(size, bytes.size() - pos - 8);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw fail("fmt chunk too short");
      format = detail::read_u16(chunk + 8);
      channels = detail::read_u16(chunk + 10);
      rate = detail::read_u32(chunk + 12);
      bits = detail::read_u16(chunk + 22);
      if (format == 0xFFFE) {
        if (avail < 26) throw fail("extensible fmt chunk too short");
        format = detail::read_u16(chunk + 32);  // first two bytes of the subformat GUID
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos += 8 + size + (size & 1);
  }
  if (format == 0) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (channels != 1) throw fail(std::to_string(channels) + " channels; only mono files are supported");
  if (rate == 0) throw fail("zero sample rate");

  Audio out;
  out.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    out.samples.resize(data_size / 2);
    for (std::size_t i = 0; i < out.samples.size(); ++i)
      out.samples[i] = static_cast<std::int16_t>(detail::read_u16(data + 2 * i)) / 32768.0;
  } else if (format == 3 && bits == 32) {
    out.samples.resize(data_size / 4);
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
      float v;
      std::memcpy(&v, data + 4 * i, 4);
      out.samples[i] = v;
    }
  } else {
    throw fail("unsupported encoding (format tag " + std::to_string(format) + ", " + std::to_string(bits) +
               " bits); expected 16-bit PCM or 32-bit float");
  }
  return out;
}

// PCM16 clips to [-1, 1] and maps full scale to +-32767.
inline void save_wav(const std::filesystem::path& path, const std::vector<double>& samples, int sample_rate,
                     WavEncoding encoding = WavEncoding::float32) {
  if (sample_rate <= 0) throw InvalidArgument("save_wav: sample rate must be positive");
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint16_t block = bits / 8;
  const auto data_size = static_cast<std::uint32_t>(samples.size() * block);

  std::string out;
  out.reserve(44 + data_size);
  out.append("RIFF");
  detail::put<std::uint32_t>(out, 36 + data_size);
  out.append("WAVEfmt ");
  detail::put<std::uint32_t>(out, 16);
  detail::put<std::uint16_t>(out, encoding == WavEncoding::pcm16 ? 1 : 3);
  detail::put<std::uint16_t>(out, 1);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate) * block);
  detail::put<std::uint16_t>(out, block);
  detail::put<std::uint16_t>(out, bits);
  out.append("data");
  detail::put<std::uint32_t>(out, data_size);
  for (double v : samples) {
    if (encoding == WavEncoding::pcm16)
      detail::put<std::int16_t>(out, static_cast<std::int16_t>(std::lround(std::clamp(v, -1.0, 1.0) * 32767.0)));
    else
      detail::put<float>(out, static_cast<float>(v));
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_wav: cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("save_wav: write failed for " + path.string());
}

}  // namespace vprir
