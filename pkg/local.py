"""
Details for run on local machine. Must be updated by each user.

root is prefixed to every relative output path the driver writes; leave it empty to write relative to the working
directory. artifacts is the default directory for checkpoints, metrics and reports.
"""

root = ''
artifacts = 'artifacts/'
