# release history
import collections

# release history
Tag = collections.namedtuple("Tag", "version date")
release_history = (
    Tag("0.1.0", "2026-10-17"),
)

# latest release version number and date
release_version = release_history[0].version
release_date = release_history[0].date

# version of the CSV/JSON output schemas
SCHEMA_VERSION = 1
