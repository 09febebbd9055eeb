#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fcbswin {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define FCBSWIN_ERROR_TYPE(NAME)                                         \
    struct NAME : Error {                                                 \
        explicit NAME(const std::string& msg) : Error(#NAME ": " + msg) {} \
    }

FCBSWIN_ERROR_TYPE(ShapeMismatch);
FCBSWIN_ERROR_TYPE(MissingMask);
FCBSWIN_ERROR_TYPE(EmptyDataset);
FCBSWIN_ERROR_TYPE(UnreadableRoot);
FCBSWIN_ERROR_TYPE(BadRatios);
FCBSWIN_ERROR_TYPE(OverlappingSequenceSets);
FCBSWIN_ERROR_TYPE(UnknownSequenceId);
FCBSWIN_ERROR_TYPE(UnmappedFilename);
FCBSWIN_ERROR_TYPE(ZeroDimension);
FCBSWIN_ERROR_TYPE(IndivisibleInput);
FCBSWIN_ERROR_TYPE(IndivisibleFeatureMap);
FCBSWIN_ERROR_TYPE(HeadDivisibility);
FCBSWIN_ERROR_TYPE(OddDimensions);
FCBSWIN_ERROR_TYPE(ChannelTooSmall);
FCBSWIN_ERROR_TYPE(ChannelMismatch);
FCBSWIN_ERROR_TYPE(IncompatibleSkip);
FCBSWIN_ERROR_TYPE(ConfigMismatch);
FCBSWIN_ERROR_TYPE(MissingTensor);
FCBSWIN_ERROR_TYPE(CorruptArchive);
FCBSWIN_ERROR_TYPE(NonBinaryTarget);
FCBSWIN_ERROR_TYPE(EmptyList);
FCBSWIN_ERROR_TYPE(EmptySplit);
FCBSWIN_ERROR_TYPE(EmptyPartition);
FCBSWIN_ERROR_TYPE(NonFiniteLoss);
FCBSWIN_ERROR_TYPE(ConfigError);

#undef FCBSWIN_ERROR_TYPE

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

}  // namespace fcbswin
