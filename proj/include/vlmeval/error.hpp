// Copyright 2026 The vlmeval Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vlmeval {

/// Every failure the engine reports to callers. Data errors map to exit code 2
/// in the CLI, invariant violations to exit code 3.
enum class Errc : std::uint8_t {
  // hierarchy
  kCycleDetected,
  kUnknownLabel,
  kDuplicateFgAssignment,
  kEmptyHierarchy,
  // tensor-store
  kIoFailure,
  kBadMagic,
  kUnsupportedVersion,
  kTruncatedFile,
  kShapeOverflow,
  kParseError,
  kBoxOutOfBounds,
  kLabelMissingForBox,
  kKeyMismatch,
  kDuplicateKey,
  // scoring
  kDimMismatch,
  kZeroNormRow,
  kZeroNormMean,
  kMissingFgEmbedding,
  kMissingClassColumn,
  kBadTemplate,
  // metrics
  kLengthMismatch,
  kEmpty,
  kNoPositives,
  kDegenerateConstantInput,
  kMissingEmbedding,
  kMissingBoxes,
  // retrieval-bench
  kNoCaptions,
  kNoLabels,
  kPoolTooSmall,
  kNoReplaceableSpan,
  kEmptyReplacementPool,
  kMissingTextScore,
  // freq-analysis
  kEmptyLexicon,
  kMissingLeafCount,
  kZeroDenominator,
  // synth-oracle
  kDimTooSmall,
  kInvalidArgument,
  // internal
  kInvariantViolation,
};

constexpr std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kCycleDetected: return "CycleDetected";
    case Errc::kUnknownLabel: return "UnknownLabel";
    case Errc::kDuplicateFgAssignment: return "DuplicateFgAssignment";
    case Errc::kEmptyHierarchy: return "EmptyHierarchy";
    case Errc::kIoFailure: return "IoFailure";
    case Errc::kBadMagic: return "BadMagic";
    case Errc::kUnsupportedVersion: return "UnsupportedVersion";
    case Errc::kTruncatedFile: return "TruncatedFile";
    case Errc::kShapeOverflow: return "ShapeOverflow";
    case Errc::kParseError: return "ParseError";
    case Errc::kBoxOutOfBounds: return "BoxOutOfBounds";
    case Errc::kLabelMissingForBox: return "LabelMissingForBox";
    case Errc::kKeyMismatch: return "KeyMismatch";
    case Errc::kDuplicateKey: return "DuplicateKey";
    case Errc::kDimMismatch: return "DimMismatch";
    case Errc::kZeroNormRow: return "ZeroNormRow";
    case Errc::kZeroNormMean: return "ZeroNormMean";
    case Errc::kMissingFgEmbedding: return "MissingFgEmbedding";
    case Errc::kMissingClassColumn: return "MissingClassColumn";
    case Errc::kBadTemplate: return "BadTemplate";
    case Errc::kLengthMismatch: return "LengthMismatch";
    case Errc::kEmpty: return "Empty";
    case Errc::kNoPositives: return "NoPositives";
    case Errc::kDegenerateConstantInput: return "DegenerateConstantInput";
    case Errc::kMissingEmbedding: return "MissingEmbedding";
    case Errc::kMissingBoxes: return "MissingBoxes";
    case Errc::kNoCaptions: return "NoCaptions";
    case Errc::kNoLabels: return "NoLabels";
    case Errc::kPoolTooSmall: return "PoolTooSmall";
    case Errc::kNoReplaceableSpan: return "NoReplaceableSpan";
    case Errc::kEmptyReplacementPool: return "EmptyReplacementPool";
    case Errc::kMissingTextScore: return "MissingTextScore";
    case Errc::kEmptyLexicon: return "EmptyLexicon";
    case Errc::kMissingLeafCount: return "MissingLeafCount";
    case Errc::kZeroDenominator: return "ZeroDenominator";
    case Errc::kDimTooSmall: return "DimTooSmall";
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kInvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& detail) {
  throw Error(code, detail);
}

inline void check_invariant(bool ok, const std::string& what) {
  if (!ok) fail(Errc::kInvariantViolation, what);
}

}  // namespace vlmeval
