#pragma once

#include <stdexcept>
#include <string>

namespace rldist {

// Root of every error the library raises. Subclasses name the failure kinds
// callers are expected to branch on.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RLDIST_DEFINE_ERROR(Name)                  \
  class Name : public Error {                      \
   public:                                         \
    explicit Name(const std::string& what)         \
        : Error(std::string(#Name ": ") + what) {} \
  }

// taskrt
RLDIST_DEFINE_ERROR(InvalidClaim);
RLDIST_DEFINE_ERROR(RuntimeShutdown);
RLDIST_DEFINE_ERROR(ActorUnavailable);
RLDIST_DEFINE_ERROR(UnknownObject);
RLDIST_DEFINE_ERROR(CorruptPayload);

// Raised on the caller side when an actor method threw. The message carries
// the actor-side error text.
RLDIST_DEFINE_ERROR(MethodError);

// tensor / policy / evaluation
RLDIST_DEFINE_ERROR(ShapeMismatch);
RLDIST_DEFINE_ERROR(MissingColumn);
RLDIST_DEFINE_ERROR(SchemaMismatch);
RLDIST_DEFINE_ERROR(MisalignedEpisodes);

// envs
RLDIST_DEFINE_ERROR(EpisodeFinished);
RLDIST_DEFINE_ERROR(InvalidAction);
RLDIST_DEFINE_ERROR(EnvError);

// optimizers
RLDIST_DEFINE_ERROR(AllEvaluatorsFailed);
RLDIST_DEFINE_ERROR(OutOfMemoryBudget);
RLDIST_DEFINE_ERROR(ShardUnavailable);
RLDIST_DEFINE_ERROR(BufferEmpty);
RLDIST_DEFINE_ERROR(InsufficientHistory);

// algorithms / tune / cli
RLDIST_DEFINE_ERROR(ConfigError);
RLDIST_DEFINE_ERROR(TrialFailed);

#undef RLDIST_DEFINE_ERROR

}  // namespace rldist
