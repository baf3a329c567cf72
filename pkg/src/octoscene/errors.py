"""Exception types raised across the package.

Every error derives from OctosceneError so callers (and the CLI) can catch
one base class. Names mirror the operation contracts they guard.
"""

from __future__ import annotations


class OctosceneError(Exception):
    """Base class for all package errors."""


# -- geometry -----------------------------------------------------------------

class EmptyCloud(OctosceneError):
    """An operation that requires points received an empty cloud."""


class NonPositiveResolution(OctosceneError):
    """Voxel resolution must be > 0."""


class NonPositiveEps(OctosceneError):
    """Density-clustering radius must be > 0."""


class EmptyContained(OctosceneError):
    """Containment ratio is undefined for an empty contained set."""


# -- ingest -------------------------------------------------------------------

class MissingPose(OctosceneError):
    """Mask lifting needs a camera pose and intrinsics."""


class ShapeMismatch(OctosceneError):
    """Mask and depth grids must have identical dimensions."""


class BadFeatureDim(OctosceneError):
    """A feature vector's length disagrees with the bundle's feature dim."""


class BadBundle(OctosceneError):
    """Malformed bundle manifest or blob."""


# -- cgsm ---------------------------------------------------------------------

class NonPositiveInterval(OctosceneError):
    """Group interval must be >= 1."""


class EmptyVoxels(OctosceneError):
    """Similarity needs non-empty voxel sets."""


class ZeroNormFeature(OctosceneError):
    """Cosine similarity is undefined for a zero-norm feature."""


# -- ifa ----------------------------------------------------------------------

class ProviderFailure(OctosceneError):
    """A feature provider failed for one view. Carries the view id."""

    def __init__(self, message: str, view_id=None):
        super().__init__(message)
        self.view_id = view_id


# -- octree -------------------------------------------------------------------

class NoOccupiedLeaves(OctosceneError):
    """The tree has no occupied leaves so occupancy volume is undefined."""


# -- graph / serialization ----------------------------------------------------

class CountMismatch(OctosceneError):
    """Instances and fused features must correspond one-to-one."""


class CorruptFile(OctosceneError):
    """Bad magic, version, or checksum in a graph file."""


class TruncatedFile(OctosceneError):
    """Graph file ends before its declared content."""


# -- retrieval ----------------------------------------------------------------

class EmbedderFailure(OctosceneError):
    """The text embedder could not produce a vector."""


class NoSuchRelation(OctosceneError):
    """Relation word is not in the standardized vocabulary for this query."""


class EmptyGraph(OctosceneError):
    """Query issued against a graph with no nodes."""


class EmptyOperand(OctosceneError):
    """Distance comparison needs non-empty reference and target results."""


class UnparsableCommand(OctosceneError):
    """The grammar planner could not parse the command. Carries raw text."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class LlmProtocolError(OctosceneError):
    """The LLM planner returned output that is not valid API calls."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


# -- generator ----------------------------------------------------------------

class BadSpec(OctosceneError):
    """Scene generator spec is invalid."""
