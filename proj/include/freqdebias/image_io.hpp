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

#pragma once

#include <string>

#include "freqdebias/spectral.hpp"

namespace freqdebias {

// Binary netpbm I/O. P5 (greyscale) loads as one channel and P6 as three;
// samples map to [0, 1] as byte / 255. Only maxval 255 is supported.
Image read_image(const std::string& path);

// Writes P5 for one channel and P6 for three. Pixels are clamped to [0, 1]
// and rounded to the nearest of 256 levels, so an image that came from
// read_image round-trips bit-exactly.
void write_image(const std::string& path, const Image& img);

// Rounds every pixel to the 8-bit grid the writer uses.
Image quantize8(const Image& img);

}  // namespace freqdebias
