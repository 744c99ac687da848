from scrloc.models import fcn
