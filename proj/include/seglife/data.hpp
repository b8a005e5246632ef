#ifndef SEGLIFE_DATA_HPP
#define SEGLIFE_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "seglife/errors.hpp"
#include "seglife/tensor.hpp"

namespace seglife {

struct LabelledSlice {
    int height = 0, width = 0;
    std::vector<double> image;   // intensities >= 0
    std::vector<uint8_t> labels; // class ids in [0, num_classes)
    int domain = 0;
};

struct DomainDataset {
    int domain = 0;
    int num_classes = 0;
    std::vector<LabelledSlice> train; // I^tr
    std::vector<LabelledSlice> val;   // I^vl
    std::vector<LabelledSlice> test;
};

// Builds a [B,1,H,W] batch tensor from slices.
Tensor make_batch(const std::vector<const LabelledSlice*>& slices);
std::vector<uint8_t> make_batch_labels(const std::vector<const LabelledSlice*>& slices);

// Self-describing binary container: magic, version, dims, class count,
// domain id, split sizes, then per record the image as little-endian
// float32, the label bytes, and a CRC32 of the record.
void write_dataset(const std::string& path, const DomainDataset& ds);
DomainDataset read_dataset(const std::string& path);

} // namespace seglife

#endif
