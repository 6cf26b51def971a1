#pragma once

#include "support.hpp"

#include <gtest/gtest.h>

namespace testutil {

template <typename F>
vfrpool::ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const vfrpool::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a vfrpool::Error";
  return vfrpool::ErrorKind::IoError;
}

}  // namespace testutil
