/*
 * Copyright 2026 The FreqDebias Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "freqdebias/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace freqdebias {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {}
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int header_int(std::istream& is, const std::string& path) {
  const std::string tok = header_token(is);
  try {
    std::size_t used = 0;
    int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(path + ": malformed netpbm header near '" + tok + "'");
  }
}

unsigned char to_byte(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(v * 255.0));
}

}  // namespace

Image read_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  const std::string magic = header_token(is);
  int channels;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw std::invalid_argument(path + ": unsupported netpbm magic '" + magic + "'");
  }
  const int w = header_int(is, path);
  const int h = header_int(is, path);
  const int maxval = header_int(is, path);
  if (maxval != 255) throw std::invalid_argument(path + ": only maxval 255 is supported");

  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * channels);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw std::invalid_argument(path + ": truncated pixel data");
  }
  Image img(h, w, channels);
  std::size_t k = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < channels; ++ch) img[ch](r, c) = buf[k++] / 255.0;
  return img;
}

void write_image(const std::string& path, const Image& img) {
  const int channels = img.channels();
  if (channels != 1 && channels != 3) {
    throw std::invalid_argument("write_image: need 1 or 3 channels, got " + std::to_string(channels));
  }
  const int h = img.height(), w = img.width();
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * channels);
  std::size_t k = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < channels; ++ch) buf[k++] = to_byte(img[ch](r, c));

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << (channels == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

Image quantize8(const Image& img) {
  Image out = img;
  for (auto& p : out.planes) p = p.unaryExpr([](double v) { return to_byte(v) / 255.0; });
  return out;
}

}  // namespace freqdebias
