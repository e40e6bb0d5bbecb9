#pragma once

#include <utility>
#include <vector>

#include "cellmixer/image.hpp"

namespace cellmixer {

// Low-level raster operations shared by the whole pipeline. All of them are
// pure, preserve shape, and handle borders by edge replication.

// Truncated sampled Gaussian, kernel normalized to sum 1.
Image gaussian_smooth(const Image& img, double sigma, int radius);
GradientField gaussian_smooth(const GradientField& field, double sigma, int radius);

// 3x3 Sobel pair, G = sqrt(Sx^2 + Sy^2). Input must be at least 3x3.
GradientField sobel_gradient_magnitude(const Image& img);

// Grayscale erosion: output pixel = min of input over the reflected
// neighborhood of b.
GradientField erode(const GradientField& field, const StructuringElement& b);

// Histogram threshold maximizing between-class variance. Returns a bin edge.
// Throws DegenerateInputError when the field is constant.
double otsu_threshold(const GradientField& field, int bins);

// Population mean/stddev over pixels where fg is false. Needs >= 2 of them.
std::pair<double, double> background_stats(const Image& img, const BinaryMask& fg);

BinaryMask threshold_above(const GradientField& field, double threshold);

// Adaptive alternative to Otsu: foreground where value > local mean + offset,
// local mean over a (2*half_window+1)^2 box.
BinaryMask local_mean_threshold(const GradientField& field, int half_window, double offset);

BinaryMask binary_dilate(const BinaryMask& mask, const StructuringElement& b);
BinaryMask binary_erode(const BinaryMask& mask, const StructuringElement& b);
BinaryMask morphological_close(const BinaryMask& mask, const StructuringElement& b);

// Background connected to the border stays background; enclosed holes flip to
// foreground. 4-connectivity on the background.
BinaryMask fill_holes(const BinaryMask& mask);

// 8-connected labeling; labels start at 1, 0 is background.
std::vector<int> connected_components(const BinaryMask& mask, int& n_labels);

BinaryMask remove_small_components(const BinaryMask& mask, int min_area);

} // namespace cellmixer
