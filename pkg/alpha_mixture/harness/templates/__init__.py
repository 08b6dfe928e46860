"""
Jinja2 templates for files written alongside experiment results. Output is
not HTML so no autoescaping is applied.
"""

import os

from jinja2 import Environment, PackageLoader, StrictUndefined

env = Environment(
    loader=PackageLoader("alpha_mixture", os.path.join("harness", "templates")),
    undefined=StrictUndefined,
    keep_trailing_newline=True,
)

trace_plot_template = env.get_template("trace.gp")
