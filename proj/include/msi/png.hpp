#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace msi::png {

// Minimal deterministic PNG writer: 8-bit RGB, filter 0, one zlib
// stream at a fixed compression level so identical pixels give
// identical bytes.
void write_rgb(const std::string& path, int width, int height,
               const std::vector<std::uint8_t>& rgb);

// Fixed 256-entry overlay colormap ("hot" ramp: black -> red -> yellow
// -> white) used for every heatmap render.
const std::array<std::array<std::uint8_t, 3>, 256>& colormap();

// Fig-style 4-panel strip: original, heatmap overlay, above(alpha_min)
// region, complement. Panels separated by a 2-pixel white gutter.
void render_panels(const std::string& path, const std::vector<float>& image,
                   const std::vector<float>& heat, int h, int w, double alpha_min);

}  // namespace msi::png
