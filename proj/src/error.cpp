#include "asw/error.hpp"

namespace asw {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::malformed_sequence: return "MalformedSequence";
    case Errc::empty_context: return "EmptyContext";
    case Errc::context_overflow: return "ContextOverflow";
    case Errc::unknown_token: return "UnknownToken";
    case Errc::shape_error: return "ShapeError";
    case Errc::use_embedding_path: return "UseEmbeddingPath";
    case Errc::precision_exhausted: return "PrecisionExhausted";
    case Errc::extraction_desync: return "ExtractionDesync";
    case Errc::capacity_exhausted: return "CapacityExhausted";
    case Errc::framing_error: return "FramingError";
    case Errc::domain_error: return "DomainError";
    case Errc::numerical_error: return "NumericalError";
    case Errc::training_diverged: return "TrainingDiverged";
    case Errc::too_large: return "TooLarge";
    case Errc::config_error: return "ConfigError";
    case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

}  // namespace asw
