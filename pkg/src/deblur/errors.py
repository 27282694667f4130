class FormatError(ValueError):
    """A file does not follow its binary/text layout."""

    def __init__(self, message: str, offset: int | None = None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class UnsupportedFormatError(FormatError):
    """Well-formed file in a variant we do not handle (e.g. 16-bit PPM)."""


class VersionError(FormatError):
    def __init__(self, found: int, expected: int, offset: int | None = None, path=None):
        self.found = found
        self.expected = expected
        super().__init__(
            f"unsupported format version {found}, expected {expected}", offset=offset, path=path
        )


class TrainingError(RuntimeError):
    """Training aborted; carries the epoch/batch where it happened."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(message)
