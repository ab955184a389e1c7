#pragma once

#include <stdexcept>
#include <string>

namespace fndclip {

// Every failure the library reports derives from Error. kind() is a short,
// stable tag used by the CLI for its machine-parseable error line.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "error"; }
};

#define FNDCLIP_DEFINE_ERROR(Name, tag)                                    \
    class Name : public Error {                                            \
    public:                                                                \
        explicit Name(const std::string& what) : Error(what) {}            \
        const char* kind() const noexcept override { return tag; }         \
    };

FNDCLIP_DEFINE_ERROR(DimensionError, "dimension")
FNDCLIP_DEFINE_ERROR(BatchSizeError, "batch_size")
FNDCLIP_DEFINE_ERROR(ConfigError, "config")
FNDCLIP_DEFINE_ERROR(LabelError, "label")
FNDCLIP_DEFINE_ERROR(StateError, "state")
FNDCLIP_DEFINE_ERROR(NumericError, "numeric")
FNDCLIP_DEFINE_ERROR(SimilarityError, "similarity")
FNDCLIP_DEFINE_ERROR(FormatError, "format")
FNDCLIP_DEFINE_ERROR(IoError, "io")
FNDCLIP_DEFINE_ERROR(SplitError, "split")
FNDCLIP_DEFINE_ERROR(NotFoundError, "not_found")

#undef FNDCLIP_DEFINE_ERROR

} // namespace fndclip
