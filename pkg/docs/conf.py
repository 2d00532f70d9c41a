#!/usr/bin/env python
# -*- coding: utf-8 -*-
#
# Sphinx configuration of the cce documentation.

import os
import sys
sys.path.insert(0, os.path.abspath('..'))

import cce

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.viewcode']
source_suffix = '.rst'
master_doc = 'index'

project = 'cce'
author = 'The cce developers'
copyright = '2026, The cce developers'
version = cce.__version__
release = cce.__version__

exclude_patterns = ['_build']
pygments_style = 'sphinx'
html_theme = 'alabaster'
