"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class CapacityError(InvalidArgument):
    """Canvas longer than the model's position table."""


class CorpusParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ConfigError(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    def __init__(self, step: int, example_index: int | None, value: float):
        where = f"step {step}"
        if example_index is not None:
            where += f", example {example_index}"
        super().__init__(f"non-finite loss {value!r} at {where}")
        self.step = step
        self.example_index = example_index


class ContractViolation(RuntimeError):
    pass
