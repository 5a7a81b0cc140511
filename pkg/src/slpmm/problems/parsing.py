"""Errors shared by the data-file loaders."""


class ParseError(ValueError):
    def __init__(self, message, line=None, column=None):
        loc = f"line {line}" if line is not None else ""
        if column is not None:
            loc += f", column {column}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.line = line
        self.column = column
