#ifndef SEGLIFE_CHECKPOINT_HPP
#define SEGLIFE_CHECKPOINT_HPP

#include <cstdint>
#include <map>
#include <string>

#include "seglife/segnet.hpp"

namespace seglife {

struct CheckpointMeta {
    std::map<int, int> provenance; // adapted domain -> source domain k*
    uint64_t seed = 0;
    std::map<std::string, double> metrics; // e.g. "val_dice.1" from training time
};

// Container file: magic, format version, a JSON header (config, provenance,
// ledger values), then named little-endian IEEE-754 weight blocks, each with
// a CRC32. Serialization order is fixed so identical nets produce identical
// bytes.
void save_checkpoint(const SegNet& net, const CheckpointMeta& meta, const std::string& path);
SegNet load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

struct CheckpointFootprint {
    size_t shared_bytes = 0;     // all conv weights
    size_t per_domain_bytes = 0; // one domain's BN params + running stats
};
CheckpointFootprint checkpoint_footprint(const SegNet& net);

} // namespace seglife

#endif
