"""Issue-triage engine: learns to label issues {bug, enhancement,
question} and to recommend an assignee, then applies both through a
webhook service on a GitHub-compatible tracker."""

__version__ = "0.1.0"
