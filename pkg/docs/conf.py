# Sphinx configuration for the jferc API reference.
#
# Build with ``sphinx-build -b html docs docs/_build``. Only the reStructuredText
# pages under api/ are rendered; the Markdown design notes next to this file are
# read directly on the repository host.

import os
import sys

DOCS_DIR = os.path.dirname(os.path.abspath(__file__))
SRC_DIR = os.path.join(os.path.dirname(DOCS_DIR), 'src')

# Modules import each other by top-level name (``from numerics import ...``),
# exactly as they do when run as ``python src/main.py``.
sys.path.insert(0, SRC_DIR)

# -- Project information -----------------------------------------------------

project = 'jferc'
copyright = '2026, jferc developers'
author = 'jferc developers'
release = '0.1'

# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',  # ``:param x:`` and Google-style sections alike
    'sphinx.ext.mathjax',   # loss formulas in objectives and fusion docstrings
    'sphinx.ext.intersphinx',
    'sphinx.ext.viewcode',
]

source_suffix = {'.rst': 'restructuredtext'}
exclude_patterns = ['_build', 'adr', '*.md']

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable', None),
    'scipy': ('https://docs.scipy.org/doc/scipy', None),
}

# -- Autodoc -----------------------------------------------------------------

autodoc_member_order = 'bysource'
autodoc_typehints = 'description'
autodoc_default_options = {
    'members': True,
    'undoc-members': False,
    'show-inheritance': True,
}
# Native-library packages; the API pages only need their names to resolve.
autodoc_mock_imports = ['soundfile', 'sklearn']

napoleon_google_docstring = True
napoleon_numpy_docstring = False

# -- Options for HTML output -------------------------------------------------

html_theme = 'alabaster'
html_title = 'jferc API reference'
