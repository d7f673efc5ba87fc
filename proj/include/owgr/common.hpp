#pragma once

#include <stdexcept>
#include <string>

namespace owgr {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define OWGR_DEFINE_ERROR(Name)                                 \
  struct Name : Error {                                         \
    explicit Name(const std::string& msg) : Error(msg) {}       \
  }

OWGR_DEFINE_ERROR(ShapeError);
OWGR_DEFINE_ERROR(MissingHead);
OWGR_DEFINE_ERROR(LabelError);
OWGR_DEFINE_ERROR(CacheError);
OWGR_DEFINE_ERROR(NumericsError);
OWGR_DEFINE_ERROR(TooShort);
OWGR_DEFINE_ERROR(CatalogError);
OWGR_DEFINE_ERROR(ParamError);
OWGR_DEFINE_ERROR(EmptyTask);
OWGR_DEFINE_ERROR(ProtocolError);
OWGR_DEFINE_ERROR(CapacityExhausted);
OWGR_DEFINE_ERROR(IoError);
OWGR_DEFINE_ERROR(UndefinedMetric);

#undef OWGR_DEFINE_ERROR

}  // namespace owgr
