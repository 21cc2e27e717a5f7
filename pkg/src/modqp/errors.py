"""Exception types raised across the package."""


class ModqpError(Exception):
    """Base class for all package errors."""


class MalformedInputError(ModqpError, ValueError):
    """An argument does not have the required structure (e.g. not in se(3))."""


class DescriptorLookupError(ModqpError, KeyError):
    """Unknown module kind, connector, or joint label."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigurationError(ModqpError, ValueError):
    """The configuration graph is not a connected tree or reuses a connector."""


class InfeasibleStateError(ModqpError):
    """A module center lies outside the boundary polyhedron."""

    def __init__(self, message, face=None, module=None):
        super().__init__(message)
        self.face = face
        self.module = module


class PenetrationError(ModqpError):
    """A module center lies inside an obstacle sphere."""

    def __init__(self, message, depth=0.0, sphere=None, module=None):
        super().__init__(message)
        self.depth = depth
        self.sphere = sphere
        self.module = module


class InfeasibleJointError(ModqpError):
    """A joint is already outside its position range, so lo > hi."""

    def __init__(self, message, joint=None):
        super().__init__(message)
        self.joint = joint


class ScenarioError(ModqpError, ValueError):
    """Validation error in an input file, located by file, line and field."""

    def __init__(self, message, path=None, line=None, field=None):
        self.path = path
        self.line = line
        self.field = field
        self.message = message
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(str(line))
        prefix = ":".join(loc)
        if field:
            prefix = f"{prefix}: {field}" if prefix else field
        super().__init__(f"{prefix}: {message}" if prefix else message)
